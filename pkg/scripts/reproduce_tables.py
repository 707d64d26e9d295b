"""
Script to reproduce the three estimation tables and the filter convergence table.
Writes results/<example>/table.csv and results/convergence.csv.
"""
import sys
import os

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.cli import main


def reproduce(extra_args):
    status = 0
    for example in ("example1", "example2", "example3"):
        print(f"📊 {example}: estimation table...")
        status |= main(["mc-table", "--example", example, "--output", f"results/{example}", *extra_args])

    print("📉 example1: filter convergence...")
    status |= main([
        "converge", "--example", "example1", "--alpha", "0",
        "--deltas", "0.1,0.04,0.01", "--n_particles", "2000", "--n_replicates", "50",
        "--output", "results/convergence.csv", *extra_args,
    ])
    print("✅ Done" if status == 0 else "❌ Some runs failed, see the log above")
    return status


if __name__ == "__main__":
    sys.exit(reproduce(sys.argv[1:]))
