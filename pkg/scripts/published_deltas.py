"""Print the per-class gain/loss tables rebuilt from the bundled fixtures."""

import argparse

from taylorskel.evaluation import delta_table, fixture_names, load_fixture


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("names", nargs="*", help="fixture names (default: all)")
    p.add_argument("--top", type=int, default=10)
    args = p.parse_args()
    for name in args.names or fixture_names():
        table = load_fixture(name)
        a, b = table.reports()
        print(f"== {name} ({table.num_classes} classes)")
        print(delta_table(a, b, k=args.top).format())
        for _, cls, orig, tay, printed in table.entries:
            if round(tay - orig, 1) != printed:
                print(f"   note: {cls!r} printed {printed:+.1f}, accuracies give {tay - orig:+.1f}")


if __name__ == "__main__":
    main()
