"""Full pipeline: corpus -> learned reward -> policy, against plain behavior cloning.

Run: python3 demos/end_to_end.py  (about 10 s)
"""
from tod_reward.policy_training import ConstantReward, EstimatorConfig, corpus_turns, train_policy
from tod_reward.ranking_losses import REWARD_NET, Transform
from tod_reward.reward_model import train_reward
from tod_reward.slotworld import SlotWorldConfig, evaluate_policy, expert_policy, generate_dataset

seed = 0
env = SlotWorldConfig()
corpus = generate_dataset(env, 2000, seed=seed)
turns = corpus_turns(corpus)

reward, _ = train_reward(corpus[:1600], REWARD_NET, 3, Transform.escort(1), 2000, 0.1, seed)

# Reward-weighted BC plus the Gumbel-softmax term, versus unweighted BC.
ours, trace = train_policy(corpus, reward, EstimatorConfig(alpha=0.1), 3000, 1.0, seed, 64, turns=turns)
bc, _ = train_policy(corpus, ConstantReward(1.0), EstimatorConfig(alpha=0.0), 3000, 1.0, seed, 64, turns=turns)

for name, pol in (("expert", expert_policy), ("learned reward", ours), ("plain BC", bc)):
    m = evaluate_policy(pol, env, 200, seed=1000 + seed)[0]
    print(f"{name:>15}: inform {m['inform']:.1f}  success {m['success']:.1f}  fluency {m['fluency']:.1f}  combined {m['combined']:.1f}")
