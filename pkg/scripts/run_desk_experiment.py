"""Original vs Taylor input on the synthetic dataset, both models at micro scale.

Writes per-run reports and the per-class delta table under --out.
"""

import argparse
import json
import os

from taylorskel import models, training
from taylorskel.evaluation import delta_table, evaluate
from taylorskel.skeleton_data import PreprocessConfig, split_dataset, synth_generate
from taylorskel.taylor import TaylorConfig

LR = {"stgcn": 0.05, "hyperformer": 0.025}


def run(kind, data, input_kind, epochs, seed, pre, taylor_cfg):
    cfg = models.micro_config(kind, data.num_classes, training.input_channels(input_kind, taylor_cfg),
                              pre.target_frames)
    tc = training.TrainConfig(base_lr=LR[kind], schedule=training.StepSchedule(100, 0.1), total_epochs=epochs,
                              batch_size=32, seed=seed, stop_at_accuracy=95.0)
    res = training.train(kind, data, tc, cfg, input_kind, taylor_cfg, pre)
    _, test = split_dataset(data)
    x, y = training.prepare_sequences(test, input_kind, taylor_cfg, pre)
    logits = training.predict(kind, res.params, x, cfg)
    return res, evaluate(logits, y, data.num_classes, f"{kind}:{input_kind}", data.class_names)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="desk_runs")
    p.add_argument("--models", nargs="+", choices=models.MODEL_KINDS, default=list(models.MODEL_KINDS))
    p.add_argument("--noise", type=float, default=3.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    os.makedirs(args.out, exist_ok=True)
    data = synth_generate(args.seed, noise=args.noise)
    pre = PreprocessConfig(target_frames=16, scale_normalize=True)
    taylor_cfg = TaylorConfig()
    summary = {}
    for kind in args.models:
        reports = {}
        for input_kind in ("original", "taylor"):
            res, report = run(kind, data, input_kind, args.epochs, args.seed, pre, taylor_cfg)
            report.save(os.path.join(args.out, f"{kind}_{input_kind}.report.json"))
            reports[input_kind] = report
            summary[f"{kind}/{input_kind}"] = {"epochs": len(res.history), "train_top1": res.history[-1]["top1"],
                                               "test_top1": report.top1, "test_top5": report.top5}
            print(f"{kind}/{input_kind}: {len(res.history)} epochs, test top1 {report.top1:.1f}")
        table = delta_table(reports["original"], reports["taylor"])
        text = table.format()
        print(text)
        with open(os.path.join(args.out, f"{kind}_delta.txt"), "w") as fh:
            fh.write(text)
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1)


if __name__ == "__main__":
    main()
