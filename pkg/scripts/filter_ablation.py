#!/usr/bin/env python3
"""Measure how the admission filters protect LF quality when the annotator
is unreliable.

Runs the pipeline against a degraded mock annotator (half its labels are
wrong, most of its keyword proposals are hallucinated) with the accuracy
filter on and off, and prints the retained-LF count and average LF accuracy
for both arms.

Example:
    python3 scripts/filter_ablation.py --seeds 3
"""

import argparse
import tempfile

from weaklab.pipeline import RunConfig, generate_synthetic, run, write_synthetic


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default=None)
    parser.add_argument("--seeds", type=int, default=1)
    parser.add_argument("--iterations", type=int, default=50)
    parser.add_argument("--p-label", type=float, default=0.5,
                        help="probability the mock annotator labels correctly")
    parser.add_argument("--p-keyword", type=float, default=0.2,
                        help="probability a proposal is signal, not hallucination")
    args = parser.parse_args()

    workdir = args.workdir or tempfile.mkdtemp(prefix="weaklab-ablation-")
    dataset, signatures, annotations = generate_synthetic(
        n_train=2000, n_valid=200, n_test=500, q=0.8, seed=0)
    paths = write_synthetic(workdir, dataset, signatures, annotations)

    def config(seed, enable_accuracy):
        return RunConfig.from_dict(dict(
            train_path=paths["train_path"], valid_path=paths["valid_path"],
            test_path=paths["test_path"], schema_path=paths["schema_path"],
            annotations_path=paths["annotations_path"], mock_signatures=signatures,
            n_iterations=args.iterations, max_opt_iters=300, grad_tol=1e-4,
            seed=seed, mock_p_label=args.p_label, mock_p_keyword=args.p_keyword,
            enable_accuracy=enable_accuracy))

    print("%-18s %8s %12s %10s" % ("arm", "seed", "lf_num", "lf_acc_avg"))
    for enable in (True, False):
        counts, accs = [], []
        for seed in range(args.seeds):
            report = run(config(seed, enable), dataset=dataset)
            counts.append(report.metrics["lf_num"])
            accs.append(report.metrics["lf_acc_avg"])
            print("%-18s %8d %12d %10s"
                  % ("accuracy filter " + ("on" if enable else "off"), seed,
                     report.metrics["lf_num"],
                     "--" if accs[-1] is None else "%.4f" % accs[-1]))
        usable = [a for a in accs if a is not None]
        if counts:
            print("%-18s %8s %12.1f %10s\n"
                  % ("  mean", "", sum(counts) / len(counts),
                     "--" if not usable else "%.4f" % (sum(usable) / len(usable))))


if __name__ == "__main__":
    main()
