import pytest

from archevo.knowledge import (
    AttributeTree,
    TreeFormatError,
    default_tree_path,
    load_default_tree,
    normalize_granularity,
    normalize_name,
    serialize_attribute_tree,
)


def small_tree() -> AttributeTree:
    return AttributeTree.from_dict(
        {
            "performance": {
                "operation": {"attention mechanisms": ["attention", "mlp"]},
                "block-and-connectivity": {"residual design": []},
                "network": {},
            },
            "efficiency": {
                "operation": {"efficient convolution": ["depthwise convolution"]},
                "block-and-connectivity": {},
                "network": {"network-wise scaling": ["compound scaling"]},
            },
        }
    )


def test_packaged_tree_counts():
    tree = load_default_tree()
    assert tree.count_mains() == 15
    assert tree.count_subs() == 55
    assert len(tree.main_categories("performance")) == 9
    assert len(tree.main_categories("efficiency")) == 6


def test_packaged_tree_serializes_back_byte_identically():
    raw = default_tree_path().read_text(encoding="utf-8")
    tree = load_default_tree()
    assert serialize_attribute_tree(tree) == raw


def test_main_categories_ordered_by_granularity_then_insertion():
    tree = small_tree()
    assert tree.main_categories("performance") == [
        "attention mechanisms",
        "residual design",
    ]
    assert tree.main_categories("efficiency") == [
        "efficient convolution",
        "network-wise scaling",
    ]


def test_resolves_and_granularity_lookup():
    tree = small_tree()
    assert tree.resolves("performance", "operation", "attention mechanisms", "mlp")
    assert tree.resolves("performance", "operation", "attention mechanisms", None)
    assert not tree.resolves("performance", "network", "attention mechanisms", None)
    assert not tree.resolves("performance", "operation", "attention mechanisms", "nope")
    assert tree.granularity_of("efficiency", "network-wise scaling") == "network"
    assert tree.granularity_of("efficiency", "missing") is None


def test_add_sub_appends_only_new_leaves():
    tree = small_tree()
    assert tree.add_sub("performance", "residual design", "Dense Shortcuts")
    # normalized duplicate is a no-op
    assert not tree.add_sub("performance", "residual design", "dense   shortcuts")
    assert tree.subs("performance", "residual design") == ["dense shortcuts"]
    with pytest.raises(KeyError):
        tree.add_sub("performance", "unknown main", "x")


def test_from_dict_rejects_malformed_input():
    with pytest.raises(TreeFormatError):
        AttributeTree.from_dict({"performance": {}})  # missing target/grans
    base = small_tree().to_dict()
    base["efficiency"]["network"]["attention mechanisms"] = []  # dup across targets is fine
    AttributeTree.from_dict(base)
    bad = small_tree().to_dict()
    bad["performance"]["network"]["attention mechanisms"] = []  # dup within target
    with pytest.raises(TreeFormatError):
        AttributeTree.from_dict(bad)


def test_tree_loader_rejects_duplicate_keys(tmp_path):
    from archevo.knowledge import load_attribute_tree

    p = tmp_path / "tree.json"
    p.write_text(
        '{"performance": {"operation": {"a": [], "a": []},'
        ' "block-and-connectivity": {}, "network": {}},'
        ' "efficiency": {"operation": {}, "block-and-connectivity": {},'
        ' "network": {}}}',
        encoding="utf-8",
    )
    with pytest.raises(TreeFormatError):
        load_attribute_tree(p)


def test_format_block_layout():
    block = small_tree().format_block("performance")
    lines = block.split("\n")
    assert lines[0] == "operation level:"
    assert lines[1] == "    attention mechanisms: [attention, mlp]"
    assert "block and connectivity level:" in block
    assert "    residual design: []" in block


def test_normalizers():
    assert normalize_name("  Grouped   Convolution ") == "grouped convolution"
    assert normalize_granularity("Operation Level") == "operation"
    assert normalize_granularity("block and connectivity level") == "block-and-connectivity"
    assert normalize_granularity("network") == "network"
    assert normalize_granularity("galaxy level") is None


def test_copy_is_deep():
    tree = small_tree()
    clone = tree.copy()
    clone.add_sub("performance", "residual design", "new leaf")
    assert tree.subs("performance", "residual design") == []
