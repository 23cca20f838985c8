//! The baked asset bundle: flow + albedo networks over one parameter store,
//! with checkpoint (de)serialization.

use std::path::Path;

use rand::Rng;

use crate::flow::{FlowModel, FlowScratch, FlowSpec};
use crate::math::{Rgb, Vec3};
use crate::nn::checkpoint::{
    self, CheckpointError, CheckpointHeader, FLAG_INDIRECT_ONLY, KIND_TRANSPORT,
};
use crate::nn::{freq_encode_len, softplus, Mlp, MlpScratch, MlpSpec, ParamStore};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct AlbedoSpec {
    pub hidden_dim: usize,
    pub hidden_layers: usize,
}

impl Default for AlbedoSpec {
    fn default() -> Self {
        AlbedoSpec { hidden_dim: 64, hidden_layers: 2 }
    }
}

/// Learned transport of one asset: scattering distribution (flow) plus the
/// directional survival albedo, sharing a parameter store so training takes
/// one optimizer step for both.
pub struct TransportModel {
    pub store: ParamStore,
    pub flow: FlowModel,
    pub albedo: Mlp,
    pub half_extents: Vec3,
    /// Trained on indirect transport only (the one-bounce direct lobe is
    /// evaluated analytically at render time).
    pub separate_direct: bool,
}

impl TransportModel {
    pub fn new(
        flow_spec: FlowSpec,
        albedo_spec: AlbedoSpec,
        half_extents: Vec3,
        separate_direct: bool,
    ) -> Self {
        let mut store = ParamStore::new();
        let flow = FlowModel::new(&mut store, flow_spec);
        let albedo = Mlp::new(
            &mut store,
            "albedo",
            MlpSpec {
                input_dim: freq_encode_len(3, flow_spec.x_bands)
                    + freq_encode_len(3, flow_spec.d_bands),
                hidden_dim: albedo_spec.hidden_dim,
                hidden_layers: albedo_spec.hidden_layers,
                output_dim: 3,
            },
        );
        TransportModel { store, flow, albedo, half_extents, separate_direct }
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        self.flow.init_identity(&mut self.store, rng);
        self.albedo.init_he(&mut self.store, rng);
    }

    /// Normalize an asset-local position to the [-1,1]^3 box coordinates the
    /// encoders expect.
    #[inline]
    pub fn x_unit(&self, x_local: Vec3) -> Vec3 {
        Vec3::new(
            x_local.x / self.half_extents.x,
            x_local.y / self.half_extents.y,
            x_local.z / self.half_extents.z,
        )
    }

    pub fn encode_prefix(&self, x_local: Vec3, w_o: Vec3, out: &mut Vec<f64>) {
        self.flow.encode_prefix(self.x_unit(x_local), w_o, out);
    }

    /// Survival albedo for an outgoing configuration (softplus-positive).
    pub fn albedo_eval(&self, prefix: &[f64], tape: &mut MlpScratch) -> Rgb {
        let out = self.albedo.forward(&self.store, prefix, tape);
        Rgb::new(softplus(out[0]), softplus(out[1]), softplus(out[2]))
    }

    pub fn save(&self, path: &Path, config_echo: &str) -> Result<(), CheckpointError> {
        let spec = self.flow.spec;
        let albedo_dims = self.albedo.spec;
        let header = CheckpointHeader {
            kind: KIND_TRANSPORT,
            k_knots: spec.k as u32,
            cond_hidden: spec.hidden_dim as u32,
            cond_layers: spec.hidden_layers as u32,
            secondary_hidden: albedo_dims.hidden_dim as u32,
            secondary_layers: albedo_dims.hidden_layers as u32,
            x_bands: spec.x_bands as u32,
            d_bands: spec.d_bands as u32,
            flags: if self.separate_direct { FLAG_INDIRECT_ONLY } else { 0 },
            half_extents: self.half_extents,
            config_echo: config_echo.to_string(),
        };
        checkpoint::save(path, &header, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let (header, store) = checkpoint::load(path)?;
        if header.kind != KIND_TRANSPORT {
            return Err(CheckpointError::Malformed(format!(
                "expected a transport checkpoint, found kind {}",
                header.kind
            )));
        }
        let flow_spec = FlowSpec {
            k: header.k_knots as usize,
            hidden_dim: header.cond_hidden as usize,
            hidden_layers: header.cond_layers as usize,
            x_bands: header.x_bands as usize,
            d_bands: header.d_bands as usize,
        };
        let flow = FlowModel::from_store(flow_spec, &store).ok_or_else(|| {
            CheckpointError::Malformed("conditioner slices do not match header dims".into())
        })?;
        let albedo_spec = MlpSpec {
            input_dim: freq_encode_len(3, flow_spec.x_bands)
                + freq_encode_len(3, flow_spec.d_bands),
            hidden_dim: header.secondary_hidden as usize,
            hidden_layers: header.secondary_layers as usize,
            output_dim: 3,
        };
        let (offset, len) = store
            .slices()
            .find(|(n, _, _)| *n == "albedo")
            .map(|(_, o, l)| (o, l))
            .ok_or_else(|| CheckpointError::Malformed("missing albedo slice".into()))?;
        if len != albedo_spec.param_count() {
            return Err(CheckpointError::Malformed("albedo slice does not match header dims".into()));
        }
        Ok(TransportModel {
            store,
            flow,
            albedo: Mlp { spec: albedo_spec, offset },
            half_extents: header.half_extents,
            separate_direct: header.flags & FLAG_INDIRECT_ONLY != 0,
        })
    }
}

/// Scratch bundle for one evaluation thread.
#[derive(Default)]
pub struct ModelScratch {
    pub flow: FlowScratch,
    pub mlp: MlpScratch,
    pub prefix: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::SParam;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_roundtrip_preserves_behavior() {
        let dir = std::env::temp_dir().join("lightbake_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        let spec = FlowSpec { k: 4, hidden_dim: 8, hidden_layers: 1, x_bands: 2, d_bands: 1 };
        let mut model =
            TransportModel::new(spec, AlbedoSpec { hidden_dim: 6, hidden_layers: 1 }, Vec3::new(1.2, 1.2, 1.2), true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        model.init(&mut rng);
        // perturb so the flow is not the identity
        for v in model.store.values_mut() {
            *v += 0.05 * crate::nn::normal_sample(&mut rng);
        }
        model.save(&path, "echo = true").unwrap();
        let loaded = TransportModel::load(&path).unwrap();
        assert_eq!(loaded.separate_direct, true);
        assert_eq!(loaded.half_extents, model.half_extents);

        let mut s1 = ModelScratch::default();
        let mut s2 = ModelScratch::default();
        let x = Vec3::new(0.4, -0.3, 0.7);
        let w = Vec3::new(0.0, 0.8, 0.6).normalized();
        model.encode_prefix(x, w, &mut s1.prefix);
        loaded.encode_prefix(x, w, &mut s2.prefix);
        let s = SParam([0.2, 0.6, 0.4, 0.9]);
        let p1 = model.flow.pdf(&model.store, &s1.prefix, s, &mut s1.flow);
        let p2 = loaded.flow.pdf(&loaded.store, &s2.prefix, s, &mut s2.flow);
        // f32 quantization in the checkpoint shifts values slightly
        for c in 0..3 {
            assert!((p1[c] - p2[c]).abs() < 1e-4 * p1[c].abs().max(1e-6));
        }
        let a1 = model.albedo_eval(&s1.prefix, &mut s1.mlp);
        let a2 = loaded.albedo_eval(&s2.prefix, &mut s2.mlp);
        for c in 0..3 {
            assert!((a1[c] - a2[c]).abs() < 1e-4);
        }
    }
}
