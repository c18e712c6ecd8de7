"""Train the length-controlled toy policy and watch the in-tolerance rate climb.

Only the length reward is active, and the policy starts from random weights,
so early utterances are far too long or too short. Prints an eval line every
50 steps. Takes well under a minute.

Run: python demos/length_control_training.py [--steps 300] [--seed 0]
"""

import argparse
from pathlib import Path

from mrgrpo.config import load_config
from mrgrpo.grpo import TrainerState, train_step
from mrgrpo.harness import choose_batch, eval_triples, evaluate, initial_params, training_triples

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "length_control.yaml"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = load_config(CONFIG).replace(seed=args.seed)
    setup = cfg.setup()
    triples, evalset = training_triples(cfg), eval_triples(cfg)
    state = TrainerState.fresh(initial_params(cfg), seed=args.seed)

    def show(step):
        m = evaluate(state.params, evalset, setup)
        print(f"step {step:4d}  in-tolerance {m['len_rate']:.2f}  mean length {m['mean_length']:5.1f}  "
              f"entropy {m['entropy']:.2f}")

    show(0)
    for step in range(args.steps):
        idx = choose_batch(len(triples), cfg.grpo.batch_size, args.seed, step)
        train_step(state, [triples[i] for i in idx], setup)
        if (step + 1) % 50 == 0:
            show(step + 1)


if __name__ == "__main__":
    main()
