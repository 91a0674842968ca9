import io

from difl import selfcheck


def test_every_check_is_within_tolerance():
    results = selfcheck.run(seeds=1)
    names = [n for n, _ in results]
    assert len(names) == 17  # 14 op kinds + 3 composites
    assert all(n.startswith(("op:", "composite:")) for n in names)
    for which in selfcheck.COMPOSITES:
        assert f"composite:{which}" in names
    assert all(err <= selfcheck.TOLERANCE for _, err in results)


def test_report_prints_one_line_per_check_and_flags_failures():
    buf = io.StringIO()
    ok = selfcheck.report([("op:fake", 1e-9), ("composite:fake", 0.5)],
                          stream=buf)
    lines = buf.getvalue().splitlines()
    assert not ok
    assert len(lines) == 3
    assert lines[0].endswith("ok")
    assert "FAIL" in lines[1]
    assert "FAILURES" in lines[2]


def test_report_passes_when_all_within_tolerance():
    buf = io.StringIO()
    assert selfcheck.report([("op:fake", 1e-9)], stream=buf)
    assert "all passed" in buf.getvalue()


def test_tiny_spec_is_a_valid_model():
    spec = selfcheck.tiny_model_spec()
    assert spec.generator.feature_width == 8
    assert spec.classifier.out_shape() == (1,)
