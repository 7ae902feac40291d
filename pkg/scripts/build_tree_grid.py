"""Regenerate the bundled optimized-tree TPP grid used by the cohort planner."""

from pathlib import Path

from poolplan.simulator import TREE_TABLE_FILE, build_tree_tpp_table, write_tree_tpp_table

if __name__ == "__main__":
    target = Path(__file__).resolve().parents[1] / "src" / "poolplan" / "data" / TREE_TABLE_FILE
    write_tree_tpp_table(target, build_tree_tpp_table())
    print(f"wrote {target}")
