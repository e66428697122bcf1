import numpy as np
import pytest
import torch

from epanet.errors import ConfigurationError, GraphCycleError, NumericError
from epanet.pyramid import (
    PRESET_NAMES,
    FusionEdge,
    FusionGraphSpec,
    FusionNode,
    build_graph,
    count_params,
    load_topology_file,
    preset_topology,
    spec_from_yaml,
    spec_to_yaml,
)
from epanet.verify import oracle_fpn

BACKBONE_WIDTHS = {3: 64, 4: 128, 5: 256}


def small_features(base_size=64, widths=None, dtype=torch.float32, gen=None):
    widths = widths or BACKBONE_WIDTHS
    return {
        level: torch.randn(1, w, base_size >> level, base_size >> level,
                           dtype=dtype, generator=gen)
        for level, w in widths.items()
    }


class TestPresets:
    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_presets_validate_and_build(self, name):
        spec = preset_topology(name)
        graph = build_graph(spec, BACKBONE_WIDTHS)
        assert count_params(graph) > 0

    def test_unknown_preset_lists_valid_names(self):
        with pytest.raises(ConfigurationError) as err:
            preset_topology("nas")
        for name in PRESET_NAMES:
            assert name in str(err.value)

    def test_fpn_structure(self):
        spec = preset_topology("fpn")
        assert spec.outputs == ["P3", "P4", "P5"]
        transforms = {e.transform for e in spec.edges}
        assert transforms == {"lateral_1x1", "up2"}  # top-down + lateral only
        assert all(n.merge == "sum" for n in spec.nodes if not n.backbone)
        assert all(n.block == "none" for n in spec.nodes if not n.backbone)

    def test_epa_green_and_blue_edges(self):
        spec = preset_topology("epa")
        by_id = {n.id: n for n in spec.nodes}
        greens = [e for e in spec.edges if e.tag == "green_longrange"]
        assert greens and all(
            abs(by_id[e.src].level - by_id[e.dst].level) >= 2 for e in greens
        )
        blues = [e for e in spec.edges if e.tag == "blue_cross"]
        assert any(
            by_id[e.src].backbone
            and e.dst in spec.outputs
            and by_id[e.src].level == by_id[e.dst].level
            for e in blues
        )

    def test_epa_prunes_middle_bottom_up(self):
        spec = preset_topology("epa")
        by_id = {n.id: n for n in spec.nodes}
        for e in spec.edges:
            if e.transform.startswith("down"):
                assert by_id[e.dst].level != 4  # no bottom-up into the middle level

    def test_panet_is_larger_than_epa(self):
        panet = preset_topology("panet")
        epa = preset_topology("epa")
        assert len(panet.nodes) + len(panet.edges) > len(epa.edges)
        assert len(panet.nodes) > len(epa.nodes)
        assert len(panet.edges) >= len(epa.edges)


class TestBuild:
    def test_fpn_execution_order(self):
        graph = build_graph(preset_topology("fpn"), BACKBONE_WIDTHS)
        assert graph.execution_order == ["P5", "P4", "P3"]

    def test_scale_mismatch_rejected(self):
        nodes = [
            FusionNode("C3", 3, backbone=True),
            FusionNode("C5", 5, backbone=True),
            FusionNode("P3", 3, 32),
        ]
        edges = [FusionEdge("C5", "P3", "up2")]  # levels differ by 2, up2 moves 1
        with pytest.raises(ConfigurationError):
            FusionGraphSpec("bad", nodes, edges, outputs=["P3"]).validate()

    def test_missing_backbone_level_rejected(self):
        with pytest.raises(ConfigurationError):
            build_graph(preset_topology("fpn"), {3: 64, 4: 128})

    def test_cycle_detected(self):
        nodes = [
            FusionNode("C3", 3, backbone=True),
            FusionNode("A", 3, 16),
            FusionNode("B", 3, 16),
        ]
        edges = [
            FusionEdge("C3", "A", "lateral_1x1"),
            FusionEdge("A", "B", "identity"),
            FusionEdge("B", "A", "identity"),
        ]
        with pytest.raises(GraphCycleError):
            FusionGraphSpec("loop", nodes, edges, outputs=["B"]).validate()

    def test_identity_width_mismatch_rejected(self):
        nodes = [
            FusionNode("C3", 3, backbone=True),
            FusionNode("A", 3, 32),
            FusionNode("B", 3, 16),
        ]
        edges = [
            FusionEdge("C3", "A", "lateral_1x1"),
            FusionEdge("A", "B", "identity"),
        ]
        spec = FusionGraphSpec("mismatch", nodes, edges, outputs=["B"])
        with pytest.raises(ConfigurationError):
            build_graph(spec, {3: 8})

    def test_epa_has_fewer_params_than_panet(self):
        epa = count_params(build_graph(preset_topology("epa"), BACKBONE_WIDTHS))
        panet = count_params(build_graph(preset_topology("panet"), BACKBONE_WIDTHS))
        assert epa < panet


class TestForward:
    def test_fpn_output_resolutions_for_640(self):
        widths = {3: 8, 4: 8, 5: 8}
        graph = build_graph(preset_topology("fpn", width=8), widths).eval()
        feats = {l: torch.randn(1, 8, 640 >> l, 640 >> l) for l in (3, 4, 5)}
        outs = graph(feats)
        assert [o.shape[-1] for o in outs] == [80, 40, 20]

    def test_zero_features_zero_bias_give_zero_outputs(self):
        graph = build_graph(preset_topology("fpn"), BACKBONE_WIDTHS).eval()
        with torch.no_grad():
            for name, p in graph.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
        feats = {l: torch.zeros(1, BACKBONE_WIDTHS[l], 64 >> l, 64 >> l) for l in (3, 4, 5)}
        for out in graph(feats):
            assert torch.equal(out, torch.zeros_like(out))

    def test_fpn_matches_straight_line_oracle(self):
        torch.manual_seed(31)
        gen = torch.Generator().manual_seed(31)
        widths = {3: 8, 4: 12, 5: 16}
        graph = build_graph(preset_topology("fpn", width=16), widths).double().eval()
        feats = small_features(64, widths, dtype=torch.float64, gen=gen)
        outs = graph(feats)
        expected = oracle_fpn(graph, {l: f.numpy() for l, f in feats.items()})
        for got, exp in zip(outs, expected):
            assert np.abs(got.detach().numpy() - exp).max() < 1e-9

    def test_missing_level_raises(self):
        graph = build_graph(preset_topology("fpn"), BACKBONE_WIDTHS)
        feats = {l: torch.zeros(1, BACKBONE_WIDTHS[l], 64 >> l, 64 >> l) for l in (3, 4)}
        with pytest.raises(ConfigurationError):
            graph(feats)

    def test_inconsistent_spatial_sizes_rejected(self):
        graph = build_graph(preset_topology("fpn"), BACKBONE_WIDTHS)
        feats = {l: torch.zeros(1, BACKBONE_WIDTHS[l], 8, 8) for l in (3, 4, 5)}
        with pytest.raises(ConfigurationError):
            graph(feats)

    def test_non_finite_intermediate_names_node(self):
        graph = build_graph(preset_topology("fpn"), BACKBONE_WIDTHS).eval()
        feats = {l: torch.zeros(1, BACKBONE_WIDTHS[l], 64 >> l, 64 >> l) for l in (3, 4, 5)}
        feats[5][0, 0, 0, 0] = float("inf")
        with pytest.raises(NumericError) as err:
            graph(feats)
        assert "P5" in str(err.value)

    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_every_preset_output_scale_consistent(self, name):
        widths = {3: 16, 4: 16, 5: 16}
        graph = build_graph(preset_topology(name, width=16), widths).eval()
        feats = {l: torch.randn(1, 16, 128 >> l, 128 >> l) for l in (3, 4, 5)}
        outs = graph(feats)
        for node_id, out in zip(graph.spec.outputs, outs):
            level = graph.spec.node(node_id).level
            assert out.shape[-1] == 128 >> level
            assert out.shape[-2] == 128 >> level


class TestParamCounting:
    def test_single_1x1_edge_is_4160(self):
        nodes = [
            FusionNode("C3", 3, backbone=True),
            FusionNode("P3", 3, 64),
        ]
        edges = [FusionEdge("C3", "P3", "lateral_1x1")]
        graph = build_graph(FusionGraphSpec("one", nodes, edges, outputs=["P3"]), {3: 64})
        assert count_params(graph) == 64 * 64 + 64 == 4160

    def test_parallel_edges_are_additive(self):
        def make(k):
            nodes = [FusionNode("C3", 3, backbone=True), FusionNode("P3", 3, 64)]
            edges = [FusionEdge("C3", "P3", "lateral_1x1") for _ in range(k)]
            return build_graph(FusionGraphSpec("par", nodes, edges, outputs=["P3"]), {3: 64})

        one = count_params(make(1))
        three = count_params(make(3))
        node_params = count_params(make(2)) - 2 * 4160
        assert three == 3 * 4160 + node_params

    def test_epa_panet_ratio_below_one(self):
        epa = count_params(build_graph(preset_topology("epa"), BACKBONE_WIDTHS))
        panet = count_params(build_graph(preset_topology("panet"), BACKBONE_WIDTHS))
        assert epa / panet < 1.0


class TestSerialization:
    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_round_trip(self, name):
        spec = preset_topology(name)
        assert spec_from_yaml(spec_to_yaml(spec)) == spec

    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_shipped_files_match_generated(self, name):
        from epanet.pyramid import packaged_topology

        assert spec_from_yaml(packaged_topology(name)) == preset_topology(name)

    def test_unknown_keys_rejected(self):
        text = spec_to_yaml(preset_topology("fpn")) + "\nextra_key: 1\n"
        with pytest.raises(ConfigurationError):
            spec_from_yaml(text)

    def test_load_topology_file(self, tmp_path):
        path = tmp_path / "custom.yaml"
        path.write_text(spec_to_yaml(preset_topology("epa", width=32)))
        spec = load_topology_file(path)
        assert spec.node("N3").width == 32
