mod common;

use common::*;

fn assert_close(name: &str, (worst, err): (String, f64)) {
    assert!(err < GRAD_TOLERANCE, "{name}: relative error {err:.3e} at {worst}");
}

#[test]
fn dyt_gradients() {
    assert_close("dyt", grad_dyt());
}

#[test]
fn layernorm_gradients() {
    assert_close("layernorm", grad_layernorm());
}

#[test]
fn axis_attention_gradients() {
    assert_close("msa_axis", grad_msa_axis());
}

#[test]
fn segment_merge_gradients() {
    assert_close("merge", grad_merge());
}

#[test]
fn graph_attention_gradients() {
    assert_close("termm", grad_termm());
}

#[test]
fn decoder_head_gradients() {
    assert_close("decode", grad_decode());
}

#[test]
fn fusion_gradients() {
    assert_close("dmfm", grad_dmfm());
}

#[test]
fn full_model_gradients() {
    assert_close("model", grad_full_model());
}
