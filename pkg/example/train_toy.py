"""Train the toy decoder with and without layer-wise drops and compare the loss curves."""

from vtcomp import CompressionSchedule, DropStrategy, build_plan, build_stepwise_matching
from vtcomp.toy import ToyConfig, gradient_check, init_params, loss_curves, memorization_task

config = ToyConfig(num_layers=4, num_heads=2, model_width=16, mlp_width=32, dtype="float64")
task = memorization_task(config, num_frames=4, initial_tokens=8, question_tokens=2, seed=0)
params = init_params(config, seed=0)

plans = {
    "none": None,
    "cosine-suffix": build_plan(CompressionSchedule.cosine(8, config.num_layers)),
    "cosine-uniform": build_plan(CompressionSchedule.cosine(8, config.num_layers), DropStrategy.UNIFORM),
    "stepwise": build_plan(build_stepwise_matching(8, config.num_layers, num_stages=3)),
}

worst = max(gradient_check(params, config, task, plans["cosine-suffix"]).values())
print(f"gradient check: worst relative error {worst:.2e}")

curves = loss_curves(params, config, plans, task, steps=300, learning_rate=0.01)
for name, losses in curves.items():
    print(f"{name:>15}: {losses[0]:.4f} -> {losses[-1]:.4f}")
