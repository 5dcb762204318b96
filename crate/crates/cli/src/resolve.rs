use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use setlab_core::io::{parse_config, render_config, Settings};
use setlab_core::synth::SynthConfig;
use setlab_core::{Error, Result};

/// Settings from the config file with the overrides applied on top.
pub fn load_settings(path: Option<&Path>, overrides: &[String]) -> Result<Settings> {
    let pairs = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            parse_config(&text)?
        }
        None => Vec::new(),
    };
    let mut settings = Settings::new(pairs);
    settings.apply_overrides(overrides)?;
    Ok(settings)
}

/// Consumes settings into typed fields while recording every resolved
/// value, so the snapshot lists defaults as well as given keys.
pub struct Resolver {
    settings: Settings,
    snapshot: Vec<(String, String)>,
}

impl Resolver {
    pub fn new(settings: Settings) -> Self {
        Resolver {
            settings,
            snapshot: Vec::new(),
        }
    }

    pub fn field<T>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.settings.take(key, slot)?;
        self.snapshot.push((key.to_string(), slot.to_string()));
        Ok(())
    }

    pub fn list<T>(&mut self, key: &str, slot: &mut Vec<T>) -> Result<()>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.settings.take_list(key, slot)?;
        let joined: Vec<String> = slot.iter().map(T::to_string).collect();
        self.snapshot.push((key.to_string(), joined.join(",")));
        Ok(())
    }

    /// Rendered snapshot; fails on keys nobody consumed.
    pub fn finish(self) -> Result<String> {
        self.settings.finish()?;
        Ok(render_config(&self.snapshot))
    }
}

pub fn synth_config(r: &mut Resolver, cfg: &mut SynthConfig) -> Result<()> {
    r.field("data.grid", &mut cfg.grid)?;
    r.field("data.samples", &mut cfg.samples)?;
    r.field("data.views", &mut cfg.views)?;
    r.field("data.view_dim", &mut cfg.view_dim)?;
    r.field("data.noise", &mut cfg.noise)?;
    let mut extent = cfg.extent.to_vec();
    r.list("data.extent", &mut extent)?;
    cfg.extent = extent
        .try_into()
        .map_err(|_| Error::Config("data.extent needs three values".into()))?;
    r.field("data.min_objects", &mut cfg.min_objects)?;
    r.field("data.max_objects", &mut cfg.max_objects)?;
    r.field("data.points", &mut cfg.points)?;
    r.field("data.clutter", &mut cfg.clutter)?;
    r.field("data.colors", &mut cfg.colors)?;
    cfg.validate()
}
