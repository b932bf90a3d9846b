use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::registry::MissingPattern;
use super::sample::{Dataset, PlaceholderPolicy};
use crate::error::{Error, Result};

/// Presence fractions of image and text in one split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub p_img: f64,
    pub p_txt: f64,
    pub seed: u64,
}

/// Sizes of the three missing-modality groups after masking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupCounts {
    pub complete: usize,
    pub image_only: usize,
    pub text_only: usize,
}

impl ScenarioConfig {
    pub fn new(p_img: f64, p_txt: f64, seed: u64) -> Result<Self> {
        let sc = ScenarioConfig { p_img, p_txt, seed };
        sc.validate()?;
        Ok(sc)
    }

    /// The three settings used throughout: 100/30, 30/100 and 65/65.
    pub fn default_triple(seed: u64) -> [ScenarioConfig; 3] {
        [
            ScenarioConfig { p_img: 1.0, p_txt: 0.3, seed },
            ScenarioConfig { p_img: 0.3, p_txt: 1.0, seed },
            ScenarioConfig { p_img: 0.65, p_txt: 0.65, seed },
        ]
    }

    pub fn with_seed(self, seed: u64) -> Self {
        ScenarioConfig { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.p_img) || !ok(self.p_txt) {
            return Err(Error::Scenario(format!(
                "presence fractions ({}, {}) must lie in [0, 1]",
                self.p_img, self.p_txt
            )));
        }
        // small slack so that e.g. 0.65 + 0.35 is not rejected by rounding
        if self.p_img + self.p_txt < 1.0 - 1e-12 {
            return Err(Error::Scenario(format!(
                "p_img + p_txt = {} < 1 would leave samples with no modality",
                self.p_img + self.p_txt
            )));
        }
        Ok(())
    }

    /// (complete, image-only, text-only) fractions.
    pub fn fractions(&self) -> (f64, f64, f64) {
        let image_only = 1.0 - self.p_txt;
        let text_only = 1.0 - self.p_img;
        ((1.0 - image_only - text_only).max(0.0), image_only, text_only)
    }

    /// Missing rate η = (1 − p_img) + (1 − p_txt): the share of samples
    /// that lost one of their two modalities.
    pub fn missing_rate(&self) -> f64 {
        2.0 - self.p_img - self.p_txt
    }

    pub fn counts(&self, n: usize) -> Result<GroupCounts> {
        self.validate()?;
        let (_, fi, ft) = self.fractions();
        let mut image_only = (fi * n as f64).round() as usize;
        let mut text_only = (ft * n as f64).round() as usize;
        while image_only + text_only > n {
            if image_only >= text_only {
                image_only -= 1;
            } else {
                text_only -= 1;
            }
        }
        Ok(GroupCounts {
            complete: n - image_only - text_only,
            image_only,
            text_only,
        })
    }

    /// Short label such as `100/30`.
    pub fn label(&self) -> String {
        format!("{}/{}", pct(self.p_img), pct(self.p_txt))
    }
}

fn pct(p: f64) -> String {
    let v = p * 100.0;
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v}")
    }
}

impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.p_img, self.p_txt)
    }
}

impl FromStr for ScenarioConfig {
    type Err = Error;

    /// Parses `pimg,ptxt`; the seed is left at 0.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [pi, pt] = parts.as_slice() else {
            return Err(Error::Config(format!("scenario \"{s}\" is not of the form pimg,ptxt")));
        };
        let parse = |x: &str| {
            x.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad fraction \"{x}\" in scenario \"{s}\"")))
        };
        ScenarioConfig::new(parse(pi)?, parse(pt)?, 0)
    }
}

/// Masks a modality-complete dataset according to `sc`.
///
/// A seeded shuffle orders the samples; the first `image_only` of them lose
/// their text, the next `text_only` lose their image, the rest stay
/// complete. Masked fields are overwritten with the policy's placeholders;
/// sample order and labels are unchanged.
pub fn apply_missing(ds: &Dataset, sc: &ScenarioConfig, pol: &PlaceholderPolicy) -> Result<Dataset> {
    let counts = sc.counts(ds.len())?;
    let m = ds.registry.m();
    if ds.samples.iter().any(|s| !s.pattern.is_complete(m)) {
        return Err(Error::Data("apply_missing needs a modality-complete dataset".into()));
    }
    let (ti, ii) = (ds.text_index(), ds.image_index());
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(sc.seed));

    let image_only = MissingPattern::from_bits(1 << ii, m)?;
    let text_only = MissingPattern::from_bits(1 << ti, m)?;
    let mut out = ds.clone();
    for &idx in &order[..counts.image_only] {
        let s = &mut out.samples[idx];
        s.text = pol.text.clone();
        s.pattern = image_only;
    }
    for &idx in &order[counts.image_only..counts.image_only + counts.text_only] {
        let s = &mut out.samples[idx];
        s.image = pol.image(s.image.h, s.image.w);
        s.pattern = text_only;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_examples() {
        let c = ScenarioConfig::new(1.0, 0.3, 0).unwrap().counts(10).unwrap();
        assert_eq!((c.complete, c.image_only, c.text_only), (3, 7, 0));
        let c = ScenarioConfig::new(0.65, 0.65, 0).unwrap().counts(20).unwrap();
        assert_eq!((c.complete, c.image_only, c.text_only), (6, 7, 7));
        assert!(matches!(ScenarioConfig::new(0.3, 0.3, 0), Err(Error::Scenario(_))));
    }

    #[test]
    fn rounding_never_overflows() {
        let c = ScenarioConfig::new(0.5, 0.5, 0).unwrap().counts(1).unwrap();
        assert_eq!(c.complete + c.image_only + c.text_only, 1);
    }

    #[test]
    fn default_scenarios_share_missing_rate() {
        for sc in ScenarioConfig::default_triple(0) {
            assert!((sc.missing_rate() - 0.7).abs() < 1e-12, "{sc}");
        }
    }

    #[test]
    fn parse_scenario() {
        let sc: ScenarioConfig = "0.65, 0.65".parse().unwrap();
        assert_eq!((sc.p_img, sc.p_txt), (0.65, 0.65));
        assert!("0.2,0.2".parse::<ScenarioConfig>().is_err());
        assert!("abc".parse::<ScenarioConfig>().is_err());
        assert_eq!(sc.label(), "65/65");
    }
}
