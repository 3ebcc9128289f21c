//! A generative network paired with its recognition network.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::generative::{GenerativeParams, LayerSpec, ObservationFamily};
use crate::layer::Activation;
use crate::numcore::{Matrix, RngStream};
use crate::params::Parameterized;
use crate::recognition::{CovarianceMode, RecognitionParams};

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub generative: Vec<LayerSpec>,
    pub observation: ObservationFamily,
    pub encoder_hidden: Vec<usize>,
    pub encoder_activation: Activation,
    pub covariance: CovarianceMode,
}

impl Architecture {
    /// Each stochastic layer (top first) is followed by two deterministic
    /// layers of width `hidden` leading into the next stochastic layer or the
    /// visible layer. The encoder has one hidden layer of width `hidden`.
    pub fn standard(
        visible_dim: usize,
        latent_dims: &[usize],
        hidden: usize,
        activation: Activation,
        observation: ObservationFamily,
        covariance: CovarianceMode,
    ) -> Self {
        let mut generative = Vec::new();
        for (l, &k) in latent_dims.iter().enumerate() {
            generative.push(LayerSpec::stochastic(k));
            let next = latent_dims.get(l + 1).copied().unwrap_or(visible_dim);
            generative.push(LayerSpec::deterministic(k, hidden, activation));
            generative.push(LayerSpec::deterministic(hidden, next, activation));
        }
        Architecture {
            generative,
            observation,
            encoder_hidden: vec![hidden],
            encoder_activation: activation,
            covariance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dlgm {
    pub generative: GenerativeParams,
    pub recognition: RecognitionParams,
}

impl Dlgm {
    /// Zero-initialized model.
    pub fn new(arch: &Architecture, kappa: f64) -> Result<Self> {
        let generative = GenerativeParams::new(arch.generative.clone(), arch.observation, kappa)?;
        let recognition = RecognitionParams::new(
            generative.visible_dim(),
            &arch.encoder_hidden,
            &generative.latent_dims(),
            arch.encoder_activation,
            arch.covariance,
        )?;
        Ok(Dlgm {
            generative,
            recognition,
        })
    }

    pub fn from_parts(generative: GenerativeParams, recognition: RecognitionParams) -> Result<Self> {
        check_dim("recognition input", generative.visible_dim(), recognition.input_dim())?;
        if generative.latent_dims() != recognition.latent_dims() {
            return Err(Error::InvalidArgument(format!(
                "latent widths differ: generative {:?}, recognition {:?}",
                generative.latent_dims(),
                recognition.latent_dims()
            )));
        }
        Ok(Dlgm {
            generative,
            recognition,
        })
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            generative: self.generative.specs().to_vec(),
            observation: self.generative.obs.family(),
            encoder_hidden: self.recognition.hidden_dims(),
            encoder_activation: self.recognition.activation,
            covariance: self.recognition.mode(),
        }
    }

    pub fn visible_dim(&self) -> usize {
        self.generative.visible_dim()
    }

    pub fn latent_dims(&self) -> Vec<usize> {
        self.generative.latent_dims()
    }

    pub fn zeros_like(&self) -> Self {
        Dlgm {
            generative: self.generative.zeros_like(),
            recognition: self.recognition.zeros_like(),
        }
    }

    /// Every weight ~ N(0, σ²); biases and log-variances 0.
    pub fn init(&mut self, sigma: f64, stream: &mut RngStream) {
        let mut s = stream.derive(1);
        self.generative.visit_params_mut(&mut |name, m| {
            if !name.ends_with(".b") && !name.ends_with("log_var") {
                m.data_mut().iter_mut().for_each(|x| *x = sigma * s.normal());
            } else {
                m.fill(0.0);
            }
        });
        self.recognition.init(sigma, &mut stream.derive(2));
    }
}

impl Parameterized for Dlgm {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Matrix)) {
        self.generative.visit_params(f);
        self.recognition.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Matrix)) {
        self.generative.visit_params_mut(f);
        self.recognition.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_architecture_round_trips() {
        let arch = Architecture::standard(
            10,
            &[3, 4],
            6,
            Activation::Rectifier,
            ObservationFamily::BernoulliLogits,
            CovarianceMode::RankOne,
        );
        let m = Dlgm::new(&arch, 1.0).unwrap();
        assert_eq!(m.architecture(), arch);
        assert_eq!(m.latent_dims(), vec![3, 4]);
        assert_eq!(m.visible_dim(), 10);
        let json = serde_json::to_string(&arch).unwrap();
        assert_eq!(serde_json::from_str::<Architecture>(&json).unwrap(), arch);
    }

    #[test]
    fn init_is_seeded() {
        let arch = Architecture::standard(
            5,
            &[2],
            3,
            Activation::Tanh,
            ObservationFamily::GaussianDiagonal,
            CovarianceMode::Diagonal,
        );
        let mut a = Dlgm::new(&arch, 1.0).unwrap();
        let mut b = a.clone();
        a.init(0.01, &mut RngStream::new(3));
        b.init(0.01, &mut RngStream::new(3));
        assert_eq!(a, b);
        assert!(a.to_flat().iter().any(|&x| x != 0.0));
        assert!(a.generative.obs != crate::generative::ObservationLikelihood::BernoulliLogits);
    }

    #[test]
    fn mismatched_parts_rejected() {
        let arch = Architecture::standard(
            5,
            &[2],
            3,
            Activation::Tanh,
            ObservationFamily::BernoulliLogits,
            CovarianceMode::Diagonal,
        );
        let m = Dlgm::new(&arch, 1.0).unwrap();
        let rec = RecognitionParams::new(5, &[3], &[4], Activation::Tanh, CovarianceMode::Diagonal).unwrap();
        assert!(Dlgm::from_parts(m.generative.clone(), rec).is_err());
    }
}
