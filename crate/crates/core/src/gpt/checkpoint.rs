use super::{GptConfig, GptModel};
use crate::error::{Error, Result};
use crate::io::{Config, Container};
use crate::tensor::{ParamStore, Real};

const PARAM_PREFIX: &str = "gpt.param.";

impl<T: Real> GptModel<T> {
    /// Sections: `gpt.config` (key=value text), `gpt.codebook` (frozen
    /// entries, MTNF) and one `gpt.param.<name>` MTNF tensor per weight,
    /// positional tables included. The container adds the content hash.
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.add("gpt.config", self.config.to_config().to_text().into_bytes())?;
        c.add_tensor("gpt.codebook", self.codebook())?;
        for (name, t) in self.params.iter() {
            c.add_tensor(format!("{PARAM_PREFIX}{name}"), t)?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let text = std::str::from_utf8(c.require("gpt.config")?)
            .map_err(|_| Error::Format("gpt.config is not UTF-8".into()))?;
        let config = GptConfig::from_config(&Config::parse(text)?)?;
        let codebook = c.tensor::<T>("gpt.codebook")?;
        let mut params = ParamStore::new();
        for name in c.names().filter_map(|n| n.strip_prefix(PARAM_PREFIX)) {
            params.add(name, c.tensor::<T>(&format!("{PARAM_PREFIX}{name}"))?);
        }
        GptModel::from_parts(config, params, codebook)
    }
}
