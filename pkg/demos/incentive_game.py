"""Posting a buy-back premium to token holders.

Solves the leader-follower game on a short horizon: the reserve chooses a
premium each step, holders decide what fraction to sell.  The result is
compared with forcing holders to keep everything or to sell everything.

    python3 demos/incentive_game.py
"""

from tokencontrol import game
from tokencontrol.harness.experiment import game_instance


def main():
    prob, params = game_instance("logarithmic", "supply-leads", horizon=8)
    res = game.bilevel_solve(prob, params)
    print(" t   premium   sold   branch")
    for t in range(prob.horizon):
        print(f"{t:2d} {res.incentives[t]:9.4f} {res.alphas[t]:6.3f}   {res.kinds[t]}")
    hold = game.forced_alpha_cost(prob, params, 0)
    sell = game.forced_alpha_cost(prob, params, 1)
    print(f"\ncost: game {res.controller_cost:.4g}, hold-all {hold:.4g}, sell-all {sell:.4g}")
    print(f"largest KKT residual {res.max_kkt_residual:.1e}")


if __name__ == "__main__":
    main()
