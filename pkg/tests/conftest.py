"""Shared test helpers for enumerating the deterministic stub MDP."""


def enumerate_trajectories(make_env):
    """DFS over complete episodes of a deterministic stub env; returns
    [(actions, outcomes)] by replaying action prefixes on fresh envs.

    Fresh envs per prefix keep eliminations from leaking across branches.
    """
    completed = []
    stack = [()]
    while stack:
        prefix = stack.pop()
        env = make_env()
        env.reset()
        ok = True
        outcomes = []
        for a in prefix:
            if env.terminal or env.queues.head(a) is None:
                ok = False
                break
            outcomes.append(env.step(a))
        if not ok:
            continue
        if env.terminal or not env.valid_actions().any():
            completed.append((prefix, outcomes))
            continue
        for a in range(6):
            if env.queues.head(a) is not None:
                stack.append(prefix + (a,))
    return completed
