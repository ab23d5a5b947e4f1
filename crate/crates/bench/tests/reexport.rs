use tempo_snn_bench::tempo_snn::{HiddenSpec, LayerKind};

#[test]
fn core_is_reexported() {
    assert_eq!(HiddenSpec::dense(4).kind, LayerKind::Dense);
}
