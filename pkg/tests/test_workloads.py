import json

import pytest

from layermig.guest import Virtualization, container_spec
from layermig.migrator import DestinationState, MigrationMode
from layermig.netsim import LinkSpec
from layermig.workloads import (
    AppProfile,
    builtin_profiles,
    load_profiles,
    per_kind,
    profile_by_name,
    profile_from_dict,
    profile_to_dict,
    scenario_matrix,
)

MB = 1_000_000
C = Virtualization.CONTAINER
V = Virtualization.VM


def test_exactly_five_builtin_profiles():
    names = [p.name for p in builtin_profiles()]
    assert names == [
        "Game Server", "RAM Simulation", "Video Streaming", "Face Detection", "No Application",
    ]


def test_game_server_constants():
    p = profile_by_name("Game Server")
    assert p.install_bytes[C] == 700_000
    assert p.memory_bytes == 1 * MB


def test_ram_simulation_constants():
    p = profile_by_name("RAM Simulation")
    assert p.install_bytes[C] == 100_000
    assert p.memory_bytes == 330 * MB
    assert p.memory_churn_rate == 0.5


def test_video_streaming_constants():
    p = profile_by_name("Video Streaming")
    assert p.install_bytes[C] == 280 * MB
    assert p.install_bytes[V] == 230 * MB
    assert p.data_bytes == 50 * MB
    assert p.memory_bytes == 30 * MB


def test_face_detection_constants():
    p = profile_by_name("Face Detection")
    assert p.install_bytes[C] == 655 * MB
    assert p.install_bytes[V] == 565 * MB
    assert p.memory_bytes == 100 * MB


def test_no_application_constants():
    p = profile_by_name("No Application")
    assert p.install_bytes[C] == 0
    assert p.install_bytes[V] == 0
    assert p.data_bytes == 0
    assert p.memory_bytes == 0


def test_unknown_profile_name():
    with pytest.raises(KeyError):
        profile_by_name("Nonexistent")


def test_negative_sizes_rejected():
    with pytest.raises(ValueError):
        AppProfile(name="bad", install_bytes=per_kind(-1, 0))
    with pytest.raises(ValueError):
        AppProfile(name="bad", install_bytes=per_kind(0, 0), memory_bytes=-5)


def test_profile_json_round_trip(tmp_path):
    original = profile_by_name("Video Streaming")
    payload = profile_to_dict(original)
    assert profile_from_dict(payload) == original

    path = tmp_path / "profiles.json"
    path.write_text(json.dumps([payload]), encoding="utf-8")
    loaded = load_profiles(path)
    assert loaded == [original]


def test_profile_from_dict_scalar_install():
    p = profile_from_dict({"name": "tiny", "install_bytes": 1234})
    assert p.install_bytes[C] == 1234
    assert p.install_bytes[V] == 1234


def test_matrix_covers_reference_grid():
    link = LinkSpec(bandwidth_bps=100e6)
    profiles = builtin_profiles()
    two_layer = scenario_matrix(
        profiles, [MigrationMode.TWO_LAYER], [DestinationState(has_base=True)], [link])
    three_layer = scenario_matrix(
        profiles, [MigrationMode.THREE_LAYER],
        [DestinationState(has_base=True), DestinationState(has_base=True, has_app=True)],
        [link])
    assert len(two_layer) + len(three_layer) == 15


def test_matrix_size_is_input_product():
    link = LinkSpec(bandwidth_bps=100e6)
    ram = profile_by_name("RAM Simulation")
    profiles = [ram.with_memory(mb * MB) for mb in (20, 100, 200, 300, 400, 500, 600)]
    scenarios = scenario_matrix(
        profiles, [MigrationMode.THREE_LAYER],
        [DestinationState(has_base=True, has_app=True)], [link])
    assert len(scenarios) == 7


def test_matrix_empty_links_gives_empty_matrix():
    assert scenario_matrix(builtin_profiles(), [MigrationMode.TWO_LAYER],
                           [DestinationState(has_base=True)], []) == []


def test_matrix_filters_invalid_combinations():
    link = LinkSpec(bandwidth_bps=100e6)
    scenarios = scenario_matrix(
        [profile_by_name("Game Server")],
        [MigrationMode.THREE_LAYER],
        [DestinationState(has_base=True, has_app=False, has_stale_instance=True)],
        [link])
    assert scenarios == []


def test_matrix_scenarios_are_deterministic():
    link = LinkSpec(bandwidth_bps=100e6)
    a = scenario_matrix(builtin_profiles(), [MigrationMode.TWO_LAYER],
                        [DestinationState(has_base=True)], [link], seed=5)
    b = scenario_matrix(builtin_profiles(), [MigrationMode.TWO_LAYER],
                        [DestinationState(has_base=True)], [link], seed=5)
    assert [s.seed for s in a] == [s.seed for s in b]
    assert len({s.seed for s in a}) == len(a)
