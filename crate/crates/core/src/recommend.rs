//! Score bands, the brightness/variance filter table, and feedback-driven
//! personalization.
//!
//! Feedback only moves rendering offsets (tint warmth and intensity). It never
//! changes which filter a risk band calls for.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

pub const HIGH_RISK_THRESHOLD: f64 = 0.7;
pub const MODERATE_RISK_THRESHOLD: f64 = 0.4;

pub const HIGH_LUX_THRESHOLD: f64 = 900.0;
pub const MEDIUM_LUX_THRESHOLD: f64 = 600.0;
pub const HIGH_VARIANCE_THRESHOLD: f64 = 6.0;

pub const MAX_INTENSITY_OFFSET: f64 = 0.3;
pub const MAX_WARMTH_STEP: i8 = 2;
pub const INTENSITY_STEP: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum FilterKind {
    #[cfg_attr(feature = "serde", serde(rename = "Dark Amber"))]
    DarkAmber,
    #[cfg_attr(feature = "serde", serde(rename = "Cool Grey"))]
    CoolGrey,
    #[cfg_attr(feature = "serde", serde(rename = "Light Grey"))]
    LightGrey,
    #[cfg_attr(feature = "serde", serde(rename = "Neutral Density"))]
    NeutralDensity,
    #[cfg_attr(feature = "serde", serde(rename = "No Filter"))]
    NoFilter,
}

impl FilterKind {
    pub const ALL: [FilterKind; 5] = [
        FilterKind::DarkAmber,
        FilterKind::CoolGrey,
        FilterKind::LightGrey,
        FilterKind::NeutralDensity,
        FilterKind::NoFilter,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FilterKind::DarkAmber => "Dark Amber",
            FilterKind::CoolGrey => "Cool Grey",
            FilterKind::LightGrey => "Light Grey",
            FilterKind::NeutralDensity => "Neutral Density",
            FilterKind::NoFilter => "No Filter",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.label() == label)
    }

    /// Ordering used for the monotonicity guarantee; light grey and neutral
    /// density share a level.
    pub fn protection_level(self) -> u8 {
        match self {
            FilterKind::NoFilter => 0,
            FilterKind::LightGrey | FilterKind::NeutralDensity => 1,
            FilterKind::CoolGrey => 2,
            FilterKind::DarkAmber => 3,
        }
    }
}

impl core::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Recommendation {
    pub filter: FilterKind,
    pub note: String,
    /// In `[-0.3, 0.3]`.
    pub intensity_offset: f64,
    /// In `[-2, 2]`; positive is warmer.
    pub warmth_step: i8,
}

impl Recommendation {
    fn base(filter: FilterKind, note: &str) -> Self {
        Self {
            filter,
            note: note.to_string(),
            intensity_offset: 0.0,
            warmth_step: 0,
        }
    }
}

/// Filter band of a score; both boundaries belong to the more protective band.
pub fn score_band(score: f64) -> FilterKind {
    if score >= HIGH_RISK_THRESHOLD {
        FilterKind::DarkAmber
    } else if score >= MODERATE_RISK_THRESHOLD {
        FilterKind::CoolGrey
    } else {
        FilterKind::NoFilter
    }
}

pub fn filter_from_score(score: f64) -> Recommendation {
    let filter = score_band(score);
    let note = match filter {
        FilterKind::DarkAmber => "Maximum protection",
        FilterKind::CoolGrey => "Moderate protection",
        _ => "Natural vision sufficient",
    };
    Recommendation::base(filter, note)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BrightnessCategory {
    High,
    Medium,
    Low,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarianceCategory {
    High,
    Low,
}

pub fn categorize(lux: f64, eye_var: f64) -> (BrightnessCategory, VarianceCategory) {
    let b = if lux >= HIGH_LUX_THRESHOLD {
        BrightnessCategory::High
    } else if lux >= MEDIUM_LUX_THRESHOLD {
        BrightnessCategory::Medium
    } else {
        BrightnessCategory::Low
    };
    let v = if eye_var >= HIGH_VARIANCE_THRESHOLD {
        VarianceCategory::High
    } else {
        VarianceCategory::Low
    };
    (b, v)
}

pub fn filter_from_categories(b: BrightnessCategory, v: VarianceCategory) -> Recommendation {
    use BrightnessCategory as B;
    use VarianceCategory as V;
    let (filter, note) = match (b, v) {
        (B::High, V::High) => (FilterKind::DarkAmber, "Maximum protection"),
        (B::High, V::Low) => (FilterKind::NeutralDensity, "Minor brightness reduction"),
        (B::Medium, V::High) => (FilterKind::CoolGrey, "Moderate instability"),
        (B::Medium, V::Low) => (FilterKind::LightGrey, "Moderate brightness"),
        (B::Low, _) => (FilterKind::NoFilter, "Natural vision sufficient"),
    };
    Recommendation::base(filter, note)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Feedback {
    TooBright,
    TooDim,
    TooWarm,
    TooCool,
    Ok,
}

impl Feedback {
    pub const ALL: [Feedback; 5] = [
        Feedback::TooBright,
        Feedback::TooDim,
        Feedback::TooWarm,
        Feedback::TooCool,
        Feedback::Ok,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Feedback::TooBright => "too-bright",
            Feedback::TooDim => "too-dim",
            Feedback::TooWarm => "too-warm",
            Feedback::TooCool => "too-cool",
            Feedback::Ok => "ok",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeedbackEntry {
    /// Seconds since the Unix epoch, supplied by the caller.
    pub timestamp: u64,
    pub feedback: Feedback,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UserProfile {
    pub warmth_step: i8,
    pub intensity_offset: f64,
    pub feedback_log: Vec<FeedbackEntry>,
}

impl UserProfile {
    /// Checks the offset bounds, e.g. after deserializing a stored profile.
    pub fn validate(&self) -> crate::Result<()> {
        if !(-MAX_INTENSITY_OFFSET..=MAX_INTENSITY_OFFSET).contains(&self.intensity_offset) {
            return Err(crate::Error::OutOfRange(alloc::format!(
                "intensity offset {}",
                self.intensity_offset
            )));
        }
        if !(-MAX_WARMTH_STEP..=MAX_WARMTH_STEP).contains(&self.warmth_step) {
            return Err(crate::Error::OutOfRange(alloc::format!(
                "warmth step {}",
                self.warmth_step
            )));
        }
        Ok(())
    }
}

/// Returns the profile after one piece of feedback. Offsets saturate at their bounds.
pub fn apply_feedback(profile: &UserProfile, feedback: Feedback, timestamp: u64) -> UserProfile {
    let mut next = profile.clone();
    match feedback {
        Feedback::TooBright => next.intensity_offset += INTENSITY_STEP,
        Feedback::TooDim => next.intensity_offset -= INTENSITY_STEP,
        Feedback::TooWarm => next.warmth_step = next.warmth_step.saturating_sub(1),
        Feedback::TooCool => next.warmth_step = next.warmth_step.saturating_add(1),
        Feedback::Ok => {}
    }
    next.intensity_offset = next
        .intensity_offset
        .clamp(-MAX_INTENSITY_OFFSET, MAX_INTENSITY_OFFSET);
    next.warmth_step = next.warmth_step.clamp(-MAX_WARMTH_STEP, MAX_WARMTH_STEP);
    next.feedback_log.push(FeedbackEntry {
        timestamp,
        feedback,
    });
    next
}

/// Carries the profile's offsets onto a recommendation; the filter is kept.
pub fn personalize(base: &Recommendation, profile: &UserProfile) -> Recommendation {
    Recommendation {
        intensity_offset: profile
            .intensity_offset
            .clamp(-MAX_INTENSITY_OFFSET, MAX_INTENSITY_OFFSET),
        warmth_step: profile.warmth_step.clamp(-MAX_WARMTH_STEP, MAX_WARMTH_STEP),
        ..base.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use BrightnessCategory as B;
    use VarianceCategory as V;

    #[test]
    fn score_bands_and_boundaries() {
        assert_eq!(filter_from_score(0.82).filter, FilterKind::DarkAmber);
        assert_eq!(filter_from_score(0.64).filter, FilterKind::CoolGrey);
        assert_eq!(filter_from_score(0.31).filter, FilterKind::NoFilter);
        assert_eq!(filter_from_score(0.70).filter, FilterKind::DarkAmber);
        assert_eq!(filter_from_score(0.40).filter, FilterKind::CoolGrey);
        assert_eq!(filter_from_score(0.0).filter, FilterKind::NoFilter);
        assert_eq!(filter_from_score(1.0).filter, FilterKind::DarkAmber);
        assert_eq!(filter_from_score(0.6999999).filter, FilterKind::CoolGrey);
        assert_eq!(filter_from_score(0.3999999).filter, FilterKind::NoFilter);
    }

    #[test]
    fn table_cells() {
        let cell = |b, v| {
            let r = filter_from_categories(b, v);
            (r.filter, r.note)
        };
        assert_eq!(
            cell(B::High, V::High),
            (FilterKind::DarkAmber, "Maximum protection".into())
        );
        assert_eq!(
            cell(B::High, V::Low),
            (
                FilterKind::NeutralDensity,
                "Minor brightness reduction".into()
            )
        );
        assert_eq!(
            cell(B::Medium, V::High),
            (FilterKind::CoolGrey, "Moderate instability".into())
        );
        assert_eq!(
            cell(B::Medium, V::Low),
            (FilterKind::LightGrey, "Moderate brightness".into())
        );
        assert_eq!(
            cell(B::Low, V::High),
            (FilterKind::NoFilter, "Natural vision sufficient".into())
        );
        assert_eq!(
            cell(B::Low, V::Low),
            (FilterKind::NoFilter, "Natural vision sufficient".into())
        );
    }

    #[test]
    fn categories() {
        assert_eq!(categorize(1000.0, 8.0), (B::High, V::High));
        assert_eq!(categorize(750.0, 5.0), (B::Medium, V::Low));
        assert_eq!(categorize(600.0, 6.0), (B::Medium, V::High));
        assert_eq!(categorize(900.0, 5.999), (B::High, V::Low));
        assert_eq!(categorize(599.99, 10.0), (B::Low, V::High));
    }

    #[test]
    fn feedback_rules() {
        let fresh = UserProfile::default();
        let ok = apply_feedback(&fresh, Feedback::Ok, 5);
        assert_eq!(ok.intensity_offset, 0.0);
        assert_eq!(ok.warmth_step, 0);
        assert_eq!(ok.feedback_log.len(), 1);

        let mut p = fresh.clone();
        for t in 0..3 {
            p = apply_feedback(&p, Feedback::TooBright, t);
        }
        assert_eq!(p.intensity_offset, 0.3);
        p = apply_feedback(&p, Feedback::TooBright, 3);
        assert_eq!(p.intensity_offset, 0.3);

        let cold = UserProfile {
            warmth_step: -2,
            ..UserProfile::default()
        };
        assert_eq!(apply_feedback(&cold, Feedback::TooWarm, 0).warmth_step, -2);
        assert_eq!(apply_feedback(&cold, Feedback::TooCool, 0).warmth_step, -1);
        assert_eq!(
            apply_feedback(&fresh, Feedback::TooDim, 0).intensity_offset,
            -0.1
        );
    }

    #[test]
    fn personalize_keeps_filter() {
        let profile = UserProfile {
            warmth_step: 1,
            intensity_offset: -0.2,
            feedback_log: Vec::new(),
        };
        let base = filter_from_score(0.9);
        let r = personalize(&base, &profile);
        assert_eq!(r.filter, base.filter);
        assert_eq!(r.note, base.note);
        assert_eq!((r.warmth_step, r.intensity_offset), (1, -0.2));
    }

    #[test]
    fn labels_round_trip() {
        for f in FilterKind::ALL {
            assert_eq!(FilterKind::from_label(f.label()), Some(f));
        }
        for f in Feedback::ALL {
            assert_eq!(Feedback::parse(f.as_str()), Some(f));
        }
    }
}
