//! Architecture identifiers and the structural configuration shared by the
//! constructors, the checkpoint format and the CLI.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    BTae,
    DcTae,
    ScTae,
    HTae,
    HTaeS,
    AeDense,
    AeSpatial,
}

impl Architecture {
    pub const ALL: [Architecture; 7] = [
        Architecture::BTae,
        Architecture::DcTae,
        Architecture::ScTae,
        Architecture::HTae,
        Architecture::HTaeS,
        Architecture::AeDense,
        Architecture::AeSpatial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::BTae => "b_tae",
            Architecture::DcTae => "dc_tae",
            Architecture::ScTae => "sc_tae",
            Architecture::HTae => "h_tae",
            Architecture::HTaeS => "h_tae_s",
            Architecture::AeDense => "ae_dense",
            Architecture::AeSpatial => "ae_spatial",
        }
    }

    pub fn from_name(s: &str) -> Option<Architecture> {
        Architecture::ALL.into_iter().find(|a| a.name() == s)
    }

    /// The transformer families; the two `ae_*` baselines are pure conv.
    pub fn is_transformer(self) -> bool {
        !matches!(self, Architecture::AeDense | Architecture::AeSpatial)
    }

    pub fn is_hierarchical(self) -> bool {
        matches!(self, Architecture::HTae | Architecture::HTaeS)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Full,
    Desk,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Full => "full",
            Preset::Desk => "desk",
        }
    }

    pub fn from_name(s: &str) -> Option<Preset> {
        match s {
            "full" => Some(Preset::Full),
            "desk" => Some(Preset::Desk),
            _ => None,
        }
    }

    pub fn image_size(self) -> usize {
        match self {
            Preset::Full => 256,
            Preset::Desk => 64,
        }
    }
}

/// Everything needed to rebuild a model's stack: written into checkpoints,
/// compared on load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub image: usize,
    pub in_ch: usize,
    /// Patch side for the transformer families; unused by the conv baselines.
    pub patch: usize,
    /// Token dim K; unused by the conv baselines.
    pub embed: usize,
    /// Total transformer layers. Flat families split them half encoder, half
    /// decoder around the bottleneck; hierarchical ones split L/4, L/2, L/4
    /// across the outer/merged/outer scales.
    pub layers: usize,
    pub heads: usize,
    /// Conv stage schedule as (channels, stride) pairs, 5×5 kernels: the
    /// image-space encoder for `ae_*`, the token-grid bottleneck for
    /// dc_tae/sc_tae. The decoder mirrors it.
    pub conv: Vec<(usize, usize)>,
    /// Width of the dense bottleneck (dc_tae, ae_dense); 0 where unused.
    pub z_dim: usize,
}

impl ModelConfig {
    /// Desk presets quarter the embed dims and halve the layer counts of the
    /// full models; flat-family patches shrink 16 → 8 so tokens keep the full
    /// preset's per-pixel embedding capacity (K/P² = 96/256 = 24/64), heads
    /// halve so per-head dims stay usable (24/4 = 6, not 24/8 = 3), and the
    /// conv stages keep the full 16× spatial reduction.
    pub fn preset(arch: Architecture, preset: Preset) -> ModelConfig {
        use Architecture::*;
        let image = preset.image_size();
        let full = preset == Preset::Full;
        let base = ModelConfig {
            arch,
            image,
            in_ch: 1,
            patch: 0,
            embed: 0,
            layers: 0,
            heads: 0,
            conv: Vec::new(),
            z_dim: 0,
        };
        match (arch, full) {
            (BTae, true) => ModelConfig { patch: 16, embed: 96, layers: 12, heads: 8, ..base },
            (BTae, false) => ModelConfig { patch: 8, embed: 24, layers: 6, heads: 4, ..base },
            (DcTae, true) => ModelConfig {
                patch: 16,
                embed: 96,
                layers: 12,
                heads: 8,
                conv: vec![(128, 2), (256, 2)],
                z_dim: 512,
                ..base
            },
            (DcTae, false) => ModelConfig {
                patch: 8,
                embed: 24,
                layers: 6,
                heads: 4,
                conv: vec![(32, 2), (64, 2)],
                z_dim: 128,
                ..base
            },
            (ScTae, true) => ModelConfig {
                patch: 16,
                embed: 96,
                layers: 12,
                heads: 8,
                conv: vec![(48, 1), (16, 1)],
                ..base
            },
            (ScTae, false) => ModelConfig {
                patch: 8,
                embed: 24,
                layers: 6,
                heads: 4,
                conv: vec![(12, 1), (4, 1)],
                ..base
            },
            (HTae | HTaeS, true) => {
                ModelConfig { patch: 4, embed: 384, layers: 8, heads: 4, ..base }
            }
            (HTae | HTaeS, false) => {
                ModelConfig { patch: 4, embed: 96, layers: 4, heads: 4, ..base }
            }
            (AeDense, true) => ModelConfig {
                conv: vec![(32, 2), (64, 2), (128, 2), (128, 2)],
                z_dim: 512,
                ..base
            },
            (AeDense, false) => ModelConfig {
                conv: vec![(8, 2), (16, 2), (32, 2), (32, 2)],
                z_dim: 128,
                ..base
            },
            (AeSpatial, true) => ModelConfig {
                conv: vec![(32, 2), (64, 2), (128, 2), (16, 2)],
                ..base
            },
            (AeSpatial, false) => ModelConfig {
                conv: vec![(8, 2), (16, 2), (32, 2), (4, 2)],
                ..base
            },
        }
    }

    /// Structural sanity; returns a human-readable complaint.
    pub fn validate(&self) -> Result<(), String> {
        if self.image == 0 || self.in_ch == 0 {
            return Err("image and in_ch must be positive".into());
        }
        if self.arch.is_transformer() {
            if self.patch == 0 || self.image % self.patch != 0 {
                return Err(format!("patch {} must tile image {}", self.patch, self.image));
            }
            if self.heads == 0 || self.embed % self.heads != 0 {
                return Err(format!("heads {} must divide embed {}", self.heads, self.embed));
            }
            if self.arch.is_hierarchical() {
                if self.layers % 4 != 0 {
                    return Err(format!(
                        "hierarchical layer count {} must be divisible by 4",
                        self.layers
                    ));
                }
                if (self.image / self.patch) % 2 != 0 {
                    return Err("hierarchical models need an even token grid".into());
                }
                if self.embed % 2 != 0 {
                    return Err("hierarchical models need an even embed dim".into());
                }
            } else if self.layers % 2 != 0 {
                return Err(format!("layer count {} must be even", self.layers));
            }
        }
        match self.arch {
            Architecture::DcTae | Architecture::AeDense => {
                if self.z_dim == 0 {
                    return Err(format!("{} needs z_dim > 0", self.arch));
                }
                if self.conv.is_empty() {
                    return Err(format!("{} needs conv stages", self.arch));
                }
            }
            Architecture::ScTae | Architecture::AeSpatial => {
                if self.conv.is_empty() {
                    return Err(format!("{} needs conv stages", self.arch));
                }
            }
            _ => {}
        }
        // Strides must evenly divide the grid they start from.
        let mut side = if self.arch.is_transformer() {
            if self.patch == 0 {
                return Err("patch must be positive".into());
            }
            self.image / self.patch
        } else {
            self.image
        };
        for &(ch, stride) in &self.conv {
            if ch == 0 || stride == 0 {
                return Err("conv channels and strides must be positive".into());
            }
            if side % stride != 0 {
                return Err(format!("stride {stride} does not divide grid side {side}"));
            }
            side /= stride;
        }
        Ok(())
    }

    /// key=value block embedded in checkpoints.
    pub fn to_text(&self) -> String {
        let conv = self
            .conv
            .iter()
            .map(|(c, s)| format!("{c}:{s}"))
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "arch={}\nimage={}\nin_ch={}\npatch={}\nembed={}\nlayers={}\nheads={}\nconv={}\nz_dim={}\n",
            self.arch, self.image, self.in_ch, self.patch, self.embed, self.layers, self.heads,
            conv, self.z_dim
        )
    }

    pub fn from_text(text: &str) -> Result<ModelConfig, String> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("bad line {line:?}"))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| format!("missing key {k}"));
        let num = |k: &str| -> Result<usize, String> {
            get(k)?.parse().map_err(|_| format!("bad number for {k}"))
        };
        let arch_name = get("arch")?;
        let arch = Architecture::from_name(arch_name)
            .ok_or_else(|| format!("unknown architecture {arch_name:?}"))?;
        let conv_text = get("conv")?;
        let mut conv = Vec::new();
        if !conv_text.is_empty() {
            for part in conv_text.split(',') {
                let (c, s) = part.split_once(':').ok_or_else(|| format!("bad conv {part:?}"))?;
                conv.push((
                    c.parse().map_err(|_| format!("bad conv channels {c:?}"))?,
                    s.parse().map_err(|_| format!("bad conv stride {s:?}"))?,
                ));
            }
        }
        let config = ModelConfig {
            arch,
            image: num("image")?,
            in_ch: num("in_ch")?,
            patch: num("patch")?,
            embed: num("embed")?,
            layers: num("layers")?,
            heads: num("heads")?,
            conv,
            z_dim: num("z_dim")?,
        };
        config.validate()?;
        Ok(config)
    }
}
