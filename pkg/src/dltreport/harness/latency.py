"""Report-availability lag under the pull and push models.

Ledger appends and composer runs are interleaved on one deterministic
schedule: after block ``t`` is appended, the composer runs if
``t % composer_every == 0``. An event at height ``h`` becomes pullable at
the first tick whose warehouse head is ``>= h``; under the push model it
is available at the next period end ``k * period >= h`` (``k >= 1``).
"""

from __future__ import annotations

import math
from statistics import mean

from ..composer import Composer
from ..ledger import Ledger
from ..mrer import ReportTemplate
from ..warehouse import Warehouse
from .scenario import ScenarioParams, build_scenario


def push_lag(height: int, period: int) -> int:
    end = max(1, math.ceil(height / period)) * period
    return end - height


def latency_report(params: ScenarioParams, template: ReportTemplate | None = None,
                   composer_every: int = 1) -> dict:
    period = template.frequency_blocks if template is not None else params.reporting_period_blocks
    sc = build_scenario(params)
    ledger = Ledger()
    wh = Warehouse(sc.registry)
    composer = Composer(ledger, sc.registry, wh)
    available_at: dict[int, int] = {}  # height -> first tick it was pullable
    tip_lag = []
    for txs in sc.blocks:
        block = ledger.append_block(txs)
        t = block.height
        if t % composer_every == 0:
            composer.run_to_head()
        for h in range(len(available_at), wh.head + 1):
            available_at.setdefault(h, t)
        tip_lag.append(t - wh.head)
    if wh.head < ledger.head_height:
        # the final catch-up run
        composer.run_to_head()
        t = ledger.head_height + 1
        for h in range(len(available_at), wh.head + 1):
            available_at.setdefault(h, t)

    pull, push = [], []
    for ev in ledger.events():
        pull.append(available_at[ev.height] - ev.height)
        push.append(push_lag(ev.height, period))
    return {
        "seed": params.seed,
        "template_id": template.template_id if template is not None else None,
        "period_blocks": period,
        "events": len(pull),
        "composer_every": composer_every,
        "pull": {"mean_lag_blocks": mean(pull) if pull else 0, "max_lag_blocks": max(pull, default=0)},
        "push": {"mean_lag_blocks": mean(push) if push else 0, "max_lag_blocks": max(push, default=0)},
        "max_head_lag_behind_tip": max(tip_lag, default=0),
    }
