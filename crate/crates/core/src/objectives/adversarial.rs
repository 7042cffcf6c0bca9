use candle_core::Tensor;

use crate::error::Result;
use crate::nn::softplus;

/// Patch adversarial losses with `D = sigmoid(logits)`, written in
/// softplus form so saturated logits stay finite:
/// `d_loss = log(1 − D(real)) + E[log D(fake)]`, `g_loss = −E[log D(fake)]`.
/// Expectations are means over patches and samples.
pub fn adversarial_losses(real_logits: &Tensor, fake_logits: &Tensor) -> Result<(Tensor, Tensor)> {
    let d = discriminator_loss(real_logits, fake_logits)?;
    let g = generator_loss(fake_logits)?;
    Ok((d, g))
}

pub fn discriminator_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Result<Tensor> {
    // log(1 − σ(x)) = −softplus(x), log σ(x) = −softplus(−x)
    let real = softplus(real_logits)?.mean_all()?.neg()?;
    let fake = softplus(&fake_logits.neg()?)?.mean_all()?.neg()?;
    Ok((real + fake)?)
}

pub fn generator_loss(fake_logits: &Tensor) -> Result<Tensor> {
    Ok(softplus(&fake_logits.neg()?)?.mean_all()?)
}
