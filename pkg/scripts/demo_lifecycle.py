#!/usr/bin/env python3
"""Walk the bundled lifecycle scenario and dump what the platform recorded:
event log, alert feed, SLA report and the verified chain tip."""

import sys
from pathlib import Path

from fedkernel.registry import verify_file
from fedkernel.scenario import run_scenario

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    ledger_path = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("/tmp/lifecycle.log")
    code, ctx = run_scenario(ROOT / "scenarios" / "end_to_end.scn",
                             ledger_path=ledger_path)
    fed = ctx.federation

    print("== event log ==")
    for line in ctx.event_log:
        print(" ", line)

    print("\n== members ==")
    for member in fed.member_view():
        print(f"  {member['cloud_id']:8s} {member['status']}")

    print("\n== alerts ==")
    for alert in fed.alert_feed.all():
        print(f"  [{alert.id}] {alert.severity.value:8s} {alert.kind.value:16s}"
              f" {alert.subject}: {alert.message}")

    print("\n== SLA report ==")
    for row in fed.sla_report():
        print(f"  {row['service_id']}/{row['metric']}: "
              f"{'orphan' if row['orphan'] else ('ok' if row['compliant'] else 'BREACH')}")

    status = verify_file(ledger_path)
    print(f"\nledger: {fed.ledger.record_count()} records in "
          f"{len(fed.ledger.blocks())} blocks, file verify="
          f"{'valid' if status.valid else status.first_bad_index}, "
          f"tip {fed.ledger.tip_digest()[:16]}..")
    return code


if __name__ == "__main__":
    sys.exit(main())
