# Switch modules off, retrain, and count what each one costs.
# Run: python3 demos/ablation_and_complexity.py
import tempfile
from pathlib import Path

from moe_linker import RunConfig
from moe_linker.complexity import complexity_report, ffn_params, format_complexity
from moe_linker.evaluation import ablation_sweep, format_ablation_table
from moe_linker.model import build_model
from moe_linker.synthetic import toy_separable_task

work = Path(tempfile.mkdtemp(prefix="ablate-"))
train_split, valid_split, catalog = toy_separable_task(work, n=12)
cfg = RunConfig(seed=1, experts_K=4, top_k=2, embed_dim=24, native_dim=16, num_patches=4,
                max_text_len=8, expert_hidden_mult=2, epochs=4, learning_rate=1e-3, batch_size=6)

# a single expert FFN d -> 2d -> d has d*2d + 2d + 2d*d + d parameters
print("expert FFN at d=4, hidden=8:", ffn_params(4, 8), "parameters")

# parameter and FLOP counts for the full model and each ablated variant
print(format_complexity(complexity_report(build_model(cfg))))

# retrain each variant and compare on the validation split
toggles = ["w/o L_T", "w/o L_V", "w/o IntraMoE-T", "w/o InterMoE", "w/o SMoE"]
rows = ablation_sweep(cfg, toggles, train_split, valid_split, catalog)
print()
print(format_ablation_table(rows))
