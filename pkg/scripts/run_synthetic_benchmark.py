#!/usr/bin/env python3
"""Full synthetic pipeline through the CLI: world -> dataset -> models -> scores.

Runs the from-scratch list model (two-step and ordered-only), the five
baselines, and the prefix-robustness comparison, then prints every report.
Everything lands under --workdir so runs are inspectable and resumable.
"""
import argparse
import json
import subprocess
import sys
import time
from pathlib import Path

CLI = [sys.executable, "-m", "ccgen.cli"]


def run(*args, capture=False):
    cmd = CLI + [str(a) for a in args]
    print("+", " ".join(cmd[2:]), file=sys.stderr)
    result = subprocess.run(cmd, capture_output=capture, text=True)
    if result.returncode != 0:
        if capture:
            sys.stderr.write(result.stderr)
        sys.exit(result.returncode)
    return result.stdout if capture else None


def banner(title):
    print(f"\n=== {title} ===")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="benchmark_run", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-concepts", type=int, default=200)
    ap.add_argument("--baskets", type=int, default=50_000)
    ap.add_argument("--noise-rate", type=float, default=0.1)
    ap.add_argument("--with-explanations", action="store_true",
                    help="also train the explanation-augmented variant (mock teacher)")
    args = ap.parse_args()

    work = args.workdir
    work.mkdir(parents=True, exist_ok=True)
    world = work / "world"
    dataset = work / "dataset.json"
    t0 = time.time()

    banner("world + dataset")
    run("synth-gen", "--n-concepts", args.n_concepts, "--baskets", args.baskets,
        "--noise-rate", args.noise_rate, "--seed", args.seed, "--out", world)
    run("build-dataset", "--concepts", world / "concepts.txt",
        "--catalog", world / "catalog.jsonl", "--behavior", world / "behavior.jsonl",
        "--seed", args.seed, "--out", dataset)

    banner("list model: two-step (unordered then ordered)")
    two_step = work / "listlm_two_step.npz"
    run("train-lm", "--dataset", dataset, "--seed", args.seed, "--out", two_step)
    preds = work / "preds_two_step.jsonl"
    run("generate", "--checkpoint", two_step, "--dataset", dataset, "--out", preds)
    run("evaluate", "--predictions", preds, "--dataset", dataset,
        "--out", work / "report_two_step.json")

    banner("list model: ordered-only ablation")
    ordered_only = work / "listlm_ordered_only.npz"
    run("train-lm", "--dataset", dataset, "--no-two-step", "--seed", args.seed,
        "--out", ordered_only)
    preds = work / "preds_ordered_only.jsonl"
    run("generate", "--checkpoint", ordered_only, "--dataset", dataset, "--out", preds)
    run("evaluate", "--predictions", preds, "--dataset", dataset,
        "--out", work / "report_ordered_only.json")

    if args.with_explanations:
        banner("list model: with distilled explanations (mock teacher)")
        explained = work / "listlm_explained.npz"
        run("train-lm", "--dataset", dataset, "--with-explanations", "--mock-teacher",
            "--cache", work / "explanations.jsonl", "--seed", args.seed, "--out", explained)
        preds = work / "preds_explained.jsonl"
        run("generate", "--checkpoint", explained, "--dataset", dataset, "--out", preds)
        run("evaluate", "--predictions", preds, "--dataset", dataset,
            "--out", work / "report_explained.json")

    banner("baselines")
    for kind in ["glove", "knn", "pair", "item2vec", "companion"]:
        out = work / f"preds_{kind}.jsonl"
        run("train-baseline", kind, "--dataset", dataset,
            "--vectors", world / "vectors.txt", "--seed", args.seed, "--out", out)
        run("evaluate", "--predictions", out, "--dataset", dataset,
            "--out", work / f"report_{kind}.json")

    banner("prefix robustness: +2 noisy prefixes (two-step vs ordered-only)")
    for tag, ckpt in [("two_step", two_step), ("ordered_only", ordered_only)]:
        run("sequential-eval", "--checkpoint", ckpt, "--dataset", dataset,
            "--prefix-mode", "given_sampled_all_n", "--n", 2, "--seed", args.seed,
            "--out", work / f"report_{tag}_plus2_all.json")

    banner("sequential modes (two-step)")
    run("sequential-eval", "--checkpoint", two_step, "--dataset", dataset,
        "--prefix-mode", "given_top_n", "--n", 1, "--seed", args.seed)
    run("sequential-eval", "--checkpoint", two_step, "--dataset", dataset,
        "--prefix-mode", "given_top_n", "--n", 5, "--probe-6", "--seed", args.seed)

    banner("summary")
    for path in sorted(work.glob("report_*.json")):
        obj = json.loads(path.read_text())["report"]
        overall = obj.get("acc_overall")
        nd = obj.get("ndcg")
        print(f"{path.stem[7:]:>24}  mode={obj['mode']:<10} "
              f"overall={overall * 100:6.2f}  "
              f"ndcg={'-' if nd is None else f'{nd * 100:6.2f}'}  "
              f"vr={obj['valid_rate'] * 100:6.2f}")
    print(f"\ntotal {time.time() - t0:.0f}s; artifacts in {work}/")


if __name__ == "__main__":
    main()
