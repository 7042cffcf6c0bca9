//! Mapping and synthesis layers in the community StyleGAN2 parameter layout.

use candle_core::{Tensor, D};

use crate::error::Result;
use crate::generator::config::{GeneratorConfig, LATENT_DIM};
use crate::nn::{add_channel_bias, conv2d, fir_filter, flip_kernel, linear, lrelu_gain, zero_insert, LRELU_GAIN};
use crate::params::{Init, ParamSpec, ParamStore};

pub const MAPPING_LR_MULT: f64 = 0.01;

pub fn mapping_specs(cfg: &GeneratorConfig) -> Vec<ParamSpec> {
    let mut s = Vec::new();
    for i in 0..cfg.mapping_layers {
        s.push(ParamSpec::new(
            format!("mapping.fc{i}.weight"),
            &[LATENT_DIM, LATENT_DIM],
            Init::Normal(1.0 / MAPPING_LR_MULT),
        ));
        s.push(ParamSpec::new(format!("mapping.fc{i}.bias"), &[LATENT_DIM], Init::Zeros));
    }
    s.push(ParamSpec::new("mapping.w_avg", &[LATENT_DIM], Init::Zeros));
    s
}

fn layer_specs(prefix: &str, cin: usize, cout: usize, res: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.affine.weight"), &[cin, LATENT_DIM], Init::Normal(1.0)),
        ParamSpec::new(format!("{prefix}.affine.bias"), &[cin], Init::Const(1.0)),
        ParamSpec::new(format!("{prefix}.weight"), &[cout, cin, 3, 3], Init::Normal(1.0)),
        ParamSpec::new(format!("{prefix}.bias"), &[cout], Init::Zeros),
        ParamSpec::new(format!("{prefix}.noise_strength"), &[], Init::Zeros),
        ParamSpec::new(format!("{prefix}.noise_const"), &[res, res], Init::Normal(1.0)),
    ]
}

fn torgb_specs(prefix: &str, cin: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.affine.weight"), &[cin, LATENT_DIM], Init::Normal(1.0)),
        ParamSpec::new(format!("{prefix}.affine.bias"), &[cin], Init::Const(1.0)),
        ParamSpec::new(format!("{prefix}.weight"), &[3, cin, 1, 1], Init::Normal(1.0)),
        ParamSpec::new(format!("{prefix}.bias"), &[3], Init::Zeros),
    ]
}

pub fn synthesis_specs(cfg: &GeneratorConfig) -> Vec<ParamSpec> {
    let mut s = Vec::new();
    let c4 = cfg.channels(4);
    s.push(ParamSpec::new("synthesis.b4.const", &[c4, 4, 4], Init::Normal(1.0)));
    s.extend(layer_specs("synthesis.b4.conv1", c4, c4, 4));
    s.extend(torgb_specs("synthesis.b4.torgb", c4));
    for r in cfg.resolutions().into_iter().skip(1) {
        let (cin, cout) = (cfg.channels(r / 2), cfg.channels(r));
        s.extend(layer_specs(&format!("synthesis.b{r}.conv0"), cin, cout, r));
        s.extend(layer_specs(&format!("synthesis.b{r}.conv1"), cout, cout, r));
        s.extend(torgb_specs(&format!("synthesis.b{r}.torgb"), cout));
    }
    s
}

fn normalize_2nd_moment(x: &Tensor) -> Result<Tensor> {
    let m = (x.sqr()?.mean_keepdim(D::Minus1)? + 1e-8)?.sqrt()?;
    Ok(x.broadcast_div(&m)?)
}

/// `z [N, 512] -> w [N, 512]`, before truncation.
pub fn mapping_forward(store: &ParamStore, cfg: &GeneratorConfig, z: &Tensor) -> Result<Tensor> {
    let mut x = normalize_2nd_moment(z)?;
    for i in 0..cfg.mapping_layers {
        let w = store.get(&format!("mapping.fc{i}.weight"))?;
        let b = store.get(&format!("mapping.fc{i}.bias"))?;
        let gain = MAPPING_LR_MULT / (w.dim(1)? as f64).sqrt();
        x = lrelu_gain(&linear(&x, &w, Some(&b), gain, MAPPING_LR_MULT)?)?;
    }
    Ok(x)
}

fn styles(store: &ParamStore, prefix: &str, w: &Tensor) -> Result<Tensor> {
    let aw = store.get(&format!("{prefix}.affine.weight"))?;
    let ab = store.get(&format!("{prefix}.affine.bias"))?;
    let gain = 1.0 / (aw.dim(1)? as f64).sqrt();
    linear(w, &aw, Some(&ab), gain, 1.0)
}

/// Modulated convolution, applied as input scaling, a shared-weight
/// convolution and output demodulation. With `up`, the convolution is a
/// stride-2 transposed convolution followed by the `[1, 3, 3, 1]` filter.
fn modulated_conv(x: &Tensor, weight: &Tensor, styles: &Tensor, demodulate: bool, up: bool) -> Result<Tensor> {
    let (n, cin, _, _) = x.dims4()?;
    let (cout, _, k, _) = weight.dims4()?;
    let x = x.broadcast_mul(&styles.reshape((n, cin, 1, 1))?)?;
    let y = if up {
        let z = zero_insert(&x)?;
        let z = z.pad_with_zeros(2, 2, 1)?.pad_with_zeros(3, 2, 1)?;
        let y = conv2d(&z, &flip_kernel(weight)?, 0, 1)?;
        fir_filter(&y, 4.0, (1, 1))?
    } else {
        conv2d(&x, weight, k / 2, 1)?
    };
    if !demodulate {
        return Ok(y);
    }
    let wsq = weight.sqr()?.sum(D::Minus1)?.sum(D::Minus1)?;
    let d = (styles.sqr()?.matmul(&wsq.t()?)? + 1e-8)?.sqrt()?.recip()?;
    Ok(y.broadcast_mul(&d.reshape((n, cout, 1, 1))?)?)
}

fn clamp(x: Tensor, limit: Option<f64>) -> Result<Tensor> {
    Ok(match limit {
        Some(c) => x.clamp(-c, c)?,
        None => x,
    })
}

/// Modulated 3×3 conv, constant noise, bias and gained leaky ReLU.
pub fn synthesis_layer(
    store: &ParamStore,
    prefix: &str,
    x: &Tensor,
    w: &Tensor,
    up: bool,
    conv_clamp: Option<f64>,
) -> Result<Tensor> {
    let s = styles(store, prefix, w)?;
    let weight = store.get(&format!("{prefix}.weight"))?;
    let y = modulated_conv(x, &weight, &s, true, up)?;
    let noise = store.get(&format!("{prefix}.noise_const"))?;
    let strength = store.get(&format!("{prefix}.noise_strength"))?;
    let (r, _) = noise.dims2()?;
    let noise = noise.reshape((1, 1, r, r))?.broadcast_mul(&strength.reshape((1, 1, 1, 1))?)?;
    let y = y.broadcast_add(&noise)?;
    let y = lrelu_gain(&add_channel_bias(&y, &store.get(&format!("{prefix}.bias"))?)?)?;
    clamp(y, conv_clamp.map(|c| c * LRELU_GAIN))
}

pub fn torgb_layer(store: &ParamStore, prefix: &str, x: &Tensor, w: &Tensor, conv_clamp: Option<f64>) -> Result<Tensor> {
    let weight = store.get(&format!("{prefix}.weight"))?;
    let (_, cin, k, _) = weight.dims4()?;
    let s = styles(store, prefix, w)?.affine(1.0 / ((cin * k * k) as f64).sqrt(), 0.0)?;
    let y = modulated_conv(x, &weight, &s, false, false)?;
    clamp(add_channel_bias(&y, &store.get(&format!("{prefix}.bias"))?)?, conv_clamp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::fir_kernel;
    use candle_core::{DType, Device};

    /// Reference transposed convolution by direct scatter: every input pixel
    /// adds `x · w` into a `(2H+1)²` canvas at offset `2i`.
    fn scatter_transpose(x: &[f64], h: usize, w: &[f64]) -> Vec<f64> {
        let o = 2 * h + 1;
        let mut out = vec![0.0; o * o];
        for i in 0..h {
            for j in 0..h {
                for a in 0..3 {
                    for b in 0..3 {
                        out[(2 * i + a) * o + 2 * j + b] += x[i * h + j] * w[a * 3 + b];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn upsampling_conv_matches_scatter_then_blur() {
        let h = 4;
        let mut init = crate::params::Initializer::new(5);
        let xv = init.normal_vec(h * h, 1.0);
        let wv = init.normal_vec(9, 1.0);
        let x = Tensor::from_vec(xv.clone(), (1, 1, h, h), &Device::Cpu).unwrap();
        let w = Tensor::from_vec(wv.clone(), (1, 1, 3, 3), &Device::Cpu).unwrap();
        let s = Tensor::ones((1, 1), DType::F64, &Device::Cpu).unwrap();
        let got = modulated_conv(&x, &w, &s, false, true).unwrap();
        assert_eq!(got.dims(), &[1, 1, 8, 8]);
        let t = scatter_transpose(&xv, h, &wv);
        let t = Tensor::from_vec(t, (1, 1, 9, 9), &Device::Cpu).unwrap();
        let f = (fir_kernel(DType::F64, &Device::Cpu).unwrap() * 4.0).unwrap().reshape((1, 1, 4, 4)).unwrap();
        let t = t.pad_with_zeros(2, 1, 1).unwrap().pad_with_zeros(3, 1, 1).unwrap();
        let want = t.conv2d(&f, 0, 1, 1, 1).unwrap();
        let d = (got - want).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn demodulation_normalizes_output_scale() {
        // with unit-variance input the demodulated output has roughly unit
        // second moment regardless of the style magnitude
        let mut init = crate::params::Initializer::new(2);
        let x = Tensor::from_vec(init.normal_vec(64 * 16 * 16, 1.0), (1, 64, 16, 16), &Device::Cpu).unwrap();
        let w = Tensor::from_vec(init.normal_vec(32 * 64 * 9, 1.0), (32, 64, 3, 3), &Device::Cpu).unwrap();
        let s = Tensor::full(7.0f64, (1, 64), &Device::Cpu).unwrap();
        let y = modulated_conv(&x, &w, &s, true, false).unwrap();
        let m = y.sqr().unwrap().mean_all().unwrap().to_scalar::<f64>().unwrap();
        assert!((m - 1.0).abs() < 0.2, "{m}");
    }
}
