use super::{Normalizer, VaeConfig, VaeModel};
use crate::error::{Error, Result};
use crate::io::{Config, Container};
use crate::rvq::{decode_codebook, encode_codebook};
use crate::tensor::{ParamStore, Real, Tensor};

const PARAM_PREFIX: &str = "vae.param.";

impl<T: Real> VaeModel<T> {
    /// Sections: `vae.config` (key=value text), `vae.codebook` (RVQC),
    /// `vae.norm.mean` and `vae.norm.std` (MTNF f64), and one
    /// `vae.param.<name>` MTNF tensor per weight.
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.add("vae.config", self.config.to_config().to_text().into_bytes())?;
        c.add("vae.codebook", encode_codebook(&self.codebook))?;
        let width = self.normalizer.mean.len();
        c.add_tensor("vae.norm.mean", &Tensor::<f64>::new(vec![width], self.normalizer.mean.clone())?)?;
        c.add_tensor("vae.norm.std", &Tensor::<f64>::new(vec![width], self.normalizer.std.clone())?)?;
        for (name, t) in self.params.iter() {
            c.add_tensor(format!("{PARAM_PREFIX}{name}"), t)?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let text = std::str::from_utf8(c.require("vae.config")?)
            .map_err(|_| Error::Format("vae.config is not UTF-8".into()))?;
        let config = VaeConfig::from_config(&Config::parse(text)?)?;
        let codebook = decode_codebook(c.require("vae.codebook")?)?;
        let normalizer = Normalizer {
            mean: c.tensor::<f64>("vae.norm.mean")?.into_vec(),
            std: c.tensor::<f64>("vae.norm.std")?.into_vec(),
        };
        let mut params = ParamStore::new();
        for name in c.names().filter_map(|n| n.strip_prefix(PARAM_PREFIX)) {
            params.add(name, c.tensor::<T>(&format!("{PARAM_PREFIX}{name}"))?);
        }
        VaeModel::from_parts(config, params, codebook, normalizer)
    }
}
