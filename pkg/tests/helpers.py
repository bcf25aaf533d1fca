"""Small hand-built instances shared by the tests."""

from lagoon.model import Instance, Job, Machine, Recipe


def tiny(works, job_recipes, machines=((1.0, 1),), beta=None, qualified=None) -> Instance:
    """Instance from recipe works, a job->recipe list and (speed, capacity) machines."""
    r = len(works)
    beta = beta or [[0.0] * r for _ in range(r)]
    qualified = qualified or [range(r)] * len(machines)
    return Instance(
        tuple(Recipe(i, float(w)) for i, w in enumerate(works)),
        tuple(Job(j, rid) for j, rid in enumerate(job_recipes)),
        tuple(Machine(i, float(s), int(c), frozenset(q)) for i, ((s, c), q) in enumerate(zip(machines, qualified))),
        tuple(tuple(float(x) for x in row) for row in beta),
    )


def three_job() -> Instance:
    """A(10), A(10), B(4) on one machine of capacity 2, full self-interference for A."""
    return tiny([10, 4], [0, 0, 1], machines=((1.0, 2),), beta=[[1.0, 0.0], [0.0, 0.0]])
