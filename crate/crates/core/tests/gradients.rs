mod common;

use common::gradcheck;

#[test]
fn every_layer_matches_finite_differences() {
    for (layer, err) in gradcheck::layer_errors() {
        assert!(err < 1e-6, "{layer}: relative error {err:e}");
    }
}

#[test]
fn mse_gradient_matches_finite_differences() {
    assert!(gradcheck::mse_error() < 1e-6);
}

#[test]
fn autoencoder_loss_matches_finite_differences() {
    let err = gradcheck::autoencoder_error();
    assert!(err < 1e-5, "relative error {err:e}");
}

#[test]
fn kl_gradient_through_soft_assignment_matches_finite_differences() {
    let (loss, z, mu) = gradcheck::kl_errors();
    assert!(loss < 1e-12, "loss mismatch {loss:e}");
    assert!(z < 1e-6 && mu < 1e-6, "z {z:e}, centroids {mu:e}");
}

#[test]
fn kl_gradient_reaches_encoder_parameters() {
    let err = gradcheck::kl_encoder_error();
    assert!(err < 1e-5, "relative error {err:e}");
}
