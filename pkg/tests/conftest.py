import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bevsync.diffusion import DiffusionSchedule, TinyDenoiser, encode_image, make_condition, train_denoiser
from bevsync.projection import project_all_views
from bevsync.scene import make_default_rig, random_scene_spec, render_gt_views, synth_bev_scene

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, str] = {}


def record_acceptance(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture(scope="session")
def rig():
    return make_default_rig()


@pytest.fixture(scope="session")
def scene():
    return synth_bev_scene(random_scene_spec(7))


@pytest.fixture(scope="session")
def renders(scene, rig):
    return render_gt_views(scene, rig)


@pytest.fixture(scope="session")
def schedule():
    return DiffusionSchedule()


@pytest.fixture(scope="session")
def train_batch(rig):
    scenes = [synth_bev_scene(random_scene_spec(s)) for s in range(3)]
    l0 = [encode_image(np.stack(render_gt_views(s, rig)[0])) for s in scenes]
    conds = [make_condition(project_all_views(s.bev, rig), rig) for s in scenes]
    return l0, conds


@pytest.fixture(scope="session")
def trained(train_batch, schedule):
    """A tiny denoiser trained for 200 steps, with the fixed-seed evaluation loss
    before and after training and the wall time spent."""
    from bevsync.diffusion import training_loss

    l0, conds = train_batch
    den = TinyDenoiser(seed=0)

    def eval_loss():
        return float(np.mean([float(training_loss(l0, conds, den, schedule, seed=10_000 + k).detach())
                              for k in range(4)]))

    t0 = time.perf_counter()
    before = eval_loss()
    history = train_denoiser(den, l0, conds, schedule, steps=200, lr=1e-2, seed=0)
    after = eval_loss()
    return {"denoiser": den, "before": before, "after": after, "history": history,
            "seconds": time.perf_counter() - t0}
