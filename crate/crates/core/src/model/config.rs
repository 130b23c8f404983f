use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Activation;

/// The full architecture or one of its single-component ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Variant {
    #[default]
    Full,
    /// Cross-attention instead of the fusion ResidualMLP in the endogenous block.
    RepByAttn,
    /// Static and dynamic exogenous variables share one embedding.
    NoDev,
    /// No dynamic (calendar) exogenous variables.
    NoEdv,
    /// No spatial attention in the exogenous block.
    NoEsc,
    /// Neither attention sublayer in the exogenous block.
    NoEsvc,
    /// No variable attention in the exogenous block.
    NoEvc,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::RepByAttn,
        Variant::NoDev,
        Variant::NoEdv,
        Variant::NoEsc,
        Variant::NoEsvc,
        Variant::NoEvc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::RepByAttn => "rep_by_attn",
            Variant::NoDev => "no_dev",
            Variant::NoEdv => "no_edv",
            Variant::NoEsc => "no_esc",
            Variant::NoEsvc => "no_esvc",
            Variant::NoEvc => "no_evc",
        }
    }

    pub fn uses_dynamic(self) -> bool {
        self != Variant::NoEdv
    }

    pub fn uses_variable_attention(self) -> bool {
        !matches!(self, Variant::NoEvc | Variant::NoEsvc)
    }

    pub fn uses_spatial_attention(self) -> bool {
        !matches!(self, Variant::NoEsc | Variant::NoEsvc)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| {
                let known: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Contract(format!("unknown variant '{s}', expected one of {}", known.join(", ")))
            })
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Turbines N.
    pub turbines: usize,
    /// Exogenous static variables C.
    pub exo: usize,
    /// Width C_e of each calendar table; the dynamic channel count is 3·C_e.
    pub time_emb: usize,
    /// Hidden width D.
    pub d_model: usize,
    /// Stacked layer pairs L.
    pub layers: usize,
    /// Lookback H.
    pub lookback: usize,
    /// Forecast horizon P.
    pub horizon: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub activation: Activation,
    pub variant: Variant,
    /// Calendar features span lookback plus horizon (H' = H + P).
    pub future_time_features: bool,
    /// Rows of the diurnal table (10-minute cadence gives 144).
    pub slots_per_day: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            turbines: 8,
            exo: 2,
            time_emb: 16,
            d_model: 64,
            layers: 3,
            lookback: 36,
            horizon: 12,
            heads: 4,
            ffn_mult: 4,
            activation: Activation::Relu,
            variant: Variant::Full,
            future_time_features: false,
            slots_per_day: 144,
        }
    }
}

impl ModelConfig {
    /// Dynamic channel count C_d.
    pub fn dyn_channels(&self) -> usize {
        3 * self.time_emb
    }

    /// Exogenous tokens per turbine: C + C_d, or C without dynamic variables.
    pub fn exo_tokens(&self) -> usize {
        if self.variant.uses_dynamic() {
            self.exo + self.dyn_channels()
        } else {
            self.exo
        }
    }

    /// Length H' of the calendar sequence.
    pub fn time_len(&self) -> usize {
        if self.future_time_features {
            self.lookback + self.horizon
        } else {
            self.lookback
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("turbines", self.turbines),
            ("exo", self.exo),
            ("time_emb", self.time_emb),
            ("d_model", self.d_model),
            ("layers", self.layers),
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("heads", self.heads),
            ("ffn_mult", self.ffn_mult),
            ("slots_per_day", self.slots_per_day),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Contract(format!("model setting '{name}' must be positive")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Contract(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        if self.variant == Variant::NoDev && self.time_len() != self.lookback {
            return Err(Error::Contract(
                "no_dev shares the static embedding, so calendar features must span the lookback only".into(),
            ));
        }
        Ok(())
    }

    /// Key/value form used by checkpoints and run configs.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("turbines", self.turbines.to_string()),
            ("exo", self.exo.to_string()),
            ("time_emb", self.time_emb.to_string()),
            ("d_model", self.d_model.to_string()),
            ("layers", self.layers.to_string()),
            ("lookback", self.lookback.to_string()),
            ("horizon", self.horizon.to_string()),
            ("heads", self.heads.to_string()),
            ("ffn_mult", self.ffn_mult.to_string()),
            ("activation", self.activation.name().to_string()),
            ("variant", self.variant.name().to_string()),
            ("future_time_features", self.future_time_features.to_string()),
            ("slots_per_day", self.slots_per_day.to_string()),
        ]
    }

    /// Sets one field from its key/value form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num(key: &str, value: &str) -> Result<usize> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Contract(format!("'{key}' expects a non-negative integer, got '{value}'")))
        }
        match key {
            "turbines" => self.turbines = num(key, value)?,
            "exo" => self.exo = num(key, value)?,
            "time_emb" => self.time_emb = num(key, value)?,
            "d_model" => self.d_model = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "lookback" => self.lookback = num(key, value)?,
            "horizon" => self.horizon = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "ffn_mult" => self.ffn_mult = num(key, value)?,
            "slots_per_day" => self.slots_per_day = num(key, value)?,
            "activation" => self.activation = value.parse()?,
            "variant" => self.variant = value.parse()?,
            "future_time_features" => {
                self.future_time_features = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Contract(format!("'{key}' expects true or false, got '{value}'")))?
            }
            other => return Err(Error::Contract(format!("unknown model setting '{other}'"))),
        }
        Ok(())
    }

    /// Smallest configuration used by gradient checks.
    pub fn toy() -> Self {
        ModelConfig {
            turbines: 3,
            exo: 2,
            time_emb: 2,
            d_model: 8,
            layers: 1,
            lookback: 8,
            horizon: 2,
            heads: 2,
            ..ModelConfig::default()
        }
    }

    /// Single-core sized model for the default synthetic farm.
    ///
    /// One calendar channel per table keeps the exogenous token count at
    /// `C + 3`; wider tables mostly memorize the day-of-year rows seen in
    /// training and generalize worse on later months.
    pub fn desk() -> Self {
        ModelConfig {
            time_emb: 1,
            d_model: 16,
            layers: 1,
            heads: 2,
            ..ModelConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_sizes() {
        let cfg = ModelConfig::default();
        assert_eq!((cfg.d_model, cfg.time_emb, cfg.dyn_channels(), cfg.layers), (64, 16, 48, 3));
        assert_eq!(cfg.exo_tokens(), 2 + 48);
        cfg.validate().unwrap();
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("No-EVC".parse::<Variant>().unwrap(), Variant::NoEvc);
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = ModelConfig {
            heads: 5,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn shared_embedding_needs_equal_lengths() {
        let cfg = ModelConfig {
            variant: Variant::NoDev,
            future_time_features: true,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn pairs_round_trip() {
        let cfg = ModelConfig {
            variant: Variant::RepByAttn,
            activation: Activation::Gelu,
            future_time_features: true,
            ..ModelConfig::toy()
        };
        let mut back = ModelConfig::default();
        for (k, v) in cfg.to_pairs() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, cfg);
        assert!(back.set("depth", "3").is_err());
        assert!(back.set("layers", "-1").is_err());
    }

    #[test]
    fn no_edv_drops_dynamic_tokens() {
        let cfg = ModelConfig {
            variant: Variant::NoEdv,
            ..ModelConfig::default()
        };
        assert_eq!(cfg.exo_tokens(), 2);
    }
}
