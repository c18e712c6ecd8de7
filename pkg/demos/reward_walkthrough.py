"""Score a few hand-written utterances and print every reward term.

Run: python demos/reward_walkthrough.py
"""

from mrgrpo import RewardConfig, Trajectory, Vocab
from mrgrpo.prosody import NUMERIC, PauseMarker, PauseSequence, PauseTemplateSet, map_silences_to_markers
from mrgrpo.rewards import score_trajectory
from mrgrpo.sim_env import make_reference, synthesize

vocab = Vocab()
target = vocab.encode("abc,de.")
# templates for the target: a #3 after the comma and a #4 at the end
templates = PauseTemplateSet("demo", NUMERIC, (
    PauseSequence(NUMERIC, (PauseMarker(4, 3), PauseMarker(7, 4))),
), text="abc,de.")



def spoken(text, style, pauses):
    out = []
    for p, tok in enumerate(vocab.speak(vocab.encode(text), style)):
        out.append(tok)
        if p + 1 in pauses:
            out.append(vocab.pause_token(pauses[p + 1]))
    return tuple(out) + (vocab.eos,)


# the reference speaker talks in style 0 and pauses at punctuation; its text
# differs from the target, so even a perfect imitation has R_sim well below 1
ref_actions = spoken("fed,cba.", 0, {4: 3, 8: 4})[:-1]
ref = make_reference(vocab.encode("fed,cba."), ref_actions, vocab)
print(f"reference rate {ref.r_ref:.2f} symbols/s")


candidates = {
    "faithful": spoken("abc,de.", 0, {4: 3, 7: 4}),
    "wrong pause": spoken("abc,de.", 0, {4: 1, 7: 4}),
    "other voice": spoken("abc,de.", 1, {4: 3, 7: 4}),
    "typo": spoken("abd,de.", 0, {4: 3, 7: 4}),
    "dragging": spoken("abc,de.", 0, {1: 4, 2: 4, 3: 4, 4: 4, 7: 4}),
}

cfg = RewardConfig(h_target=1.0)
print(f"{'utterance':<12} {'intl':>6} {'sim':>6} {'len':>4} {'ent':>5} {'pro':>4} {'total':>6}  pauses")
for name, actions in candidates.items():
    n = len(actions)
    # pretend the sampler was fairly confident at every step
    traj = Trajectory(target, actions, (0.0,) * n, (0.8,) * n, True, ref_actions)
    synth = synthesize(actions, vocab)
    bd = score_trajectory(traj, synth, ref, templates, cfg)
    marks = " ".join(f"{m.position}:#{m.label}" for m in map_silences_to_markers(synth.silence_segments).markers)
    print(f"{name:<12} {bd.r_intl:6.3f} {bd.r_sim:6.3f} {bd.r_len:4.0f} {bd.r_ent:5.2f} {bd.r_pro:4.0f} "
          f"{bd.total:6.3f}  {marks}")
