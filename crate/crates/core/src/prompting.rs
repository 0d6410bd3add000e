//! Prompt construction, prompt weighting and guidance mapping.
//!
//! A prompt concatenates a label sentence ("A picture of a <label>") with the
//! selected caption. Each rendered prompt carries byte spans for the label
//! and caption parts so a diffusion backend can scale the corresponding
//! token embeddings by `w_l` and `w_c`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub const DEFAULT_LABEL_WEIGHT: f64 = 1.50;
pub const DEFAULT_CAPTION_WEIGHT: f64 = 0.90;

const LABEL_PREFIX: &str = "A picture of a ";
const SEPARATOR: &str = ", ";
const TERMINATOR: &str = ".";

pub const BEGIN_MARKER: &str = "<|startoftext|>";
pub const END_MARKER: &str = "<|endoftext|>";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("label is empty")]
    EmptyLabel,
    #[error("prompt mode {0} requires a caption")]
    MissingCaption(PromptMode),
    #[error("embedding sequence has {got} rows but the span map has {expected} tokens")]
    SpanMismatch { expected: usize, got: usize },
    #[error("prompt weights must be positive and finite (w_l={w_l}, w_c={w_c})")]
    InvalidWeight { w_l: f64, w_c: f64 },
    #[error("similarity {0} is outside [-1, 1]")]
    OutOfRange(f64),
    #[error("constant guidance mapping needs constant_value")]
    MissingConstant,
}

/// Which parts of the prompt are rendered. The four variants correspond to
/// the prompt ablation rows: no prompt, caption only, label only, complete.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    None,
    LabelOnly,
    CaptionOnly,
    #[default]
    Full,
}

impl PromptMode {
    pub const ALL: [PromptMode; 4] = [
        PromptMode::None,
        PromptMode::CaptionOnly,
        PromptMode::LabelOnly,
        PromptMode::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::None => "none",
            PromptMode::LabelOnly => "label_only",
            PromptMode::CaptionOnly => "caption_only",
            PromptMode::Full => "full",
        }
    }

    pub fn needs_caption(self) -> bool {
        matches!(self, PromptMode::CaptionOnly | PromptMode::Full)
    }

    pub fn needs_label(self) -> bool {
        matches!(self, PromptMode::LabelOnly | PromptMode::Full)
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "none" => Ok(PromptMode::None),
            "label_only" => Ok(PromptMode::LabelOnly),
            "caption_only" => Ok(PromptMode::CaptionOnly),
            "full" => Ok(PromptMode::Full),
            other => Err(format!(
                "unknown prompt mode {other:?} (expected none|label_only|caption_only|full)"
            )),
        }
    }
}

/// Byte range into `rendered_text`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteSpan {
    pub start: usize,
    pub end: usize,
}

impl ByteSpan {
    fn contains(&self, r: &Range<usize>) -> bool {
        r.start >= self.start && r.end <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPrompt {
    pub label_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_text: Option<String>,
    pub prompt_mode: PromptMode,
    pub bracket_mode: bool,
    pub rendered_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_span: Option<ByteSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_span: Option<ByteSpan>,
    pub w_l: f64,
    pub w_c: f64,
    /// Rescale weighted embeddings back to the unweighted mean norm.
    #[serde(default)]
    pub renormalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanRole {
    Label,
    Caption,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptToken {
    pub text: String,
    pub role: SpanRole,
}

/// Token sequence of a prompt with the role of every token, including the
/// begin and end markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanMap {
    pub tokens: Vec<PromptToken>,
}

impl SpanMap {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn roles(&self) -> impl Iterator<Item = SpanRole> + '_ {
        self.tokens.iter().map(|t| t.role)
    }

    /// Build a span map directly from roles (for backends with their own tokenizer).
    pub fn from_roles(roles: &[SpanRole]) -> Self {
        SpanMap {
            tokens: roles
                .iter()
                .map(|&role| PromptToken {
                    text: String::new(),
                    role,
                })
                .collect(),
        }
    }
}

/// Label sentence: `A picture of a <label>`, or `A picture of a [<label>]`
/// in bracket mode.
pub fn make_label_text(label_text: &str, bracket_mode: bool) -> Result<String, PromptError> {
    let label = label_text.trim();
    if label.is_empty() {
        return Err(PromptError::EmptyLabel);
    }
    Ok(if bracket_mode {
        format!("{LABEL_PREFIX}[{label}]")
    } else {
        format!("{LABEL_PREFIX}{label}")
    })
}

fn clean_caption(caption: Option<&str>) -> Option<&str> {
    caption
        .map(|c| c.trim().trim_end_matches('.').trim_end())
        .filter(|c| !c.is_empty())
}

/// Render the prompt for `mode` with the default weights.
///
/// A trailing period on the caption is dropped before the terminator is
/// appended, so captions that already end in "." do not render as "..".
pub fn build_prompt(
    label_text: &str,
    caption: Option<&str>,
    mode: PromptMode,
    bracket_mode: bool,
) -> Result<WeightedPrompt, PromptError> {
    let caption = clean_caption(caption);
    if mode.needs_caption() && caption.is_none() {
        return Err(PromptError::MissingCaption(mode));
    }
    let label_sentence = if mode.needs_label() {
        Some(make_label_text(label_text, bracket_mode)?)
    } else {
        None
    };

    let mut rendered = String::new();
    let mut label_span = None;
    let mut caption_span = None;
    match mode {
        PromptMode::None => {}
        PromptMode::LabelOnly => {
            let l = label_sentence.expect("label sentence");
            label_span = Some(ByteSpan {
                start: 0,
                end: l.len(),
            });
            rendered.push_str(&l);
            rendered.push_str(TERMINATOR);
        }
        PromptMode::CaptionOnly => {
            let c = caption.expect("caption");
            caption_span = Some(ByteSpan {
                start: 0,
                end: c.len(),
            });
            rendered.push_str(c);
            rendered.push_str(TERMINATOR);
        }
        PromptMode::Full => {
            let l = label_sentence.expect("label sentence");
            let c = caption.expect("caption");
            label_span = Some(ByteSpan {
                start: 0,
                end: l.len(),
            });
            rendered.push_str(&l);
            rendered.push_str(SEPARATOR);
            let start = rendered.len();
            rendered.push_str(c);
            caption_span = Some(ByteSpan {
                start,
                end: rendered.len(),
            });
            rendered.push_str(TERMINATOR);
        }
    }

    Ok(WeightedPrompt {
        label_text: label_text.trim().to_string(),
        caption_text: caption.map(str::to_string),
        prompt_mode: mode,
        bracket_mode,
        rendered_text: rendered,
        label_span,
        caption_span,
        w_l: DEFAULT_LABEL_WEIGHT,
        w_c: DEFAULT_CAPTION_WEIGHT,
        renormalize: false,
    })
}

fn is_punct(c: char) -> bool {
    matches!(c, ',' | '.' | '[' | ']' | '!' | '?' | ';' | ':')
}

/// Split text into word and single-character punctuation tokens with their
/// byte ranges.
fn tokenize(text: &str) -> Vec<(Range<usize>, &str)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() || is_punct(c) {
            if let Some(s) = start.take() {
                out.push((s..i, &text[s..i]));
            }
            if is_punct(c) {
                let end = i + c.len_utf8();
                out.push((i..end, &text[i..end]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s..text.len(), &text[s..]));
    }
    out
}

impl WeightedPrompt {
    pub fn with_weights(mut self, w_l: f64, w_c: f64) -> Result<Self, PromptError> {
        check_weights(w_l, w_c)?;
        self.w_l = w_l;
        self.w_c = w_c;
        Ok(self)
    }

    pub fn is_empty(&self) -> bool {
        self.rendered_text.is_empty()
    }

    /// Word-level token sequence with begin/end markers and span roles.
    pub fn span_map(&self) -> SpanMap {
        let mut tokens = vec![PromptToken {
            text: BEGIN_MARKER.into(),
            role: SpanRole::Other,
        }];
        for (range, text) in tokenize(&self.rendered_text) {
            let role = if self.label_span.is_some_and(|s| s.contains(&range)) {
                SpanRole::Label
            } else if self.caption_span.is_some_and(|s| s.contains(&range)) {
                SpanRole::Caption
            } else {
                SpanRole::Other
            };
            tokens.push(PromptToken {
                text: text.to_string(),
                role,
            });
        }
        tokens.push(PromptToken {
            text: END_MARKER.into(),
            role: SpanRole::Other,
        });
        SpanMap { tokens }
    }
}

/// Recover `(label, caption)` from a full-mode rendering. Labels containing
/// the separator sequence are ambiguous and may not round-trip.
pub fn parse_full_prompt(rendered: &str, bracket_mode: bool) -> Option<(String, String)> {
    let rest = rendered.strip_prefix(LABEL_PREFIX)?;
    let rest = rest.strip_suffix(TERMINATOR)?;
    if bracket_mode {
        let rest = rest.strip_prefix('[')?;
        let split = rest.find("], ")?;
        Some((rest[..split].to_string(), rest[split + 3..].to_string()))
    } else {
        let split = rest.find(SEPARATOR)?;
        Some((
            rest[..split].to_string(),
            rest[split + SEPARATOR.len()..].to_string(),
        ))
    }
}

fn check_weights(w_l: f64, w_c: f64) -> Result<(), PromptError> {
    if w_l > 0.0 && w_c > 0.0 && w_l.is_finite() && w_c.is_finite() {
        Ok(())
    } else {
        Err(PromptError::InvalidWeight { w_l, w_c })
    }
}

/// Scale token embeddings (one row per token) by span: label rows by `w_l`,
/// caption rows by `w_c`, everything else left as is. With `renormalize`
/// the result is rescaled so its mean row L2 norm equals the input's.
pub fn weight_embeddings(
    embeddings: &Array2<f64>,
    span_map: &SpanMap,
    w_l: f64,
    w_c: f64,
    renormalize: bool,
) -> Result<Array2<f64>, PromptError> {
    check_weights(w_l, w_c)?;
    if embeddings.nrows() != span_map.len() {
        return Err(PromptError::SpanMismatch {
            expected: span_map.len(),
            got: embeddings.nrows(),
        });
    }
    let mut out = embeddings.clone();
    for (mut row, role) in out.axis_iter_mut(Axis(0)).zip(span_map.roles()) {
        match role {
            SpanRole::Label => row.mapv_inplace(|v| v * w_l),
            SpanRole::Caption => row.mapv_inplace(|v| v * w_c),
            SpanRole::Other => {}
        }
    }
    if renormalize {
        let before = mean_row_norm(embeddings);
        let after = mean_row_norm(&out);
        if after > 0.0 {
            let scale = before / after;
            out.mapv_inplace(|v| v * scale);
        }
    }
    Ok(out)
}

fn mean_row_norm(m: &Array2<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let total: f64 = m
        .axis_iter(Axis(0))
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum();
    total / m.nrows() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMapping {
    /// g = -4 s^2 + 2 s + 1
    #[default]
    Quadratic,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub mapping: GuidanceMapping,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constant_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    /// Keep the unclamped value in generated provenance.
    pub record_raw: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            mapping: GuidanceMapping::Quadratic,
            constant_value: None,
            floor: None,
            record_raw: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Guidance {
    pub raw: f64,
    pub applied: f64,
}

/// The quadratic similarity-to-guidance map. Concave, peaking at 1.25 for s = 0.25.
pub fn quadratic_guidance(s: f64) -> f64 {
    -4.0 * s * s + 2.0 * s + 1.0
}

pub fn guidance_scale(s_star: f64, config: &GuidanceConfig) -> Result<Guidance, PromptError> {
    if !(-1.0..=1.0).contains(&s_star) {
        return Err(PromptError::OutOfRange(s_star));
    }
    let raw = match config.mapping {
        GuidanceMapping::Quadratic => quadratic_guidance(s_star),
        GuidanceMapping::Constant => config.constant_value.ok_or(PromptError::MissingConstant)?,
    };
    let applied = match config.floor {
        Some(floor) => raw.max(floor),
        None => raw,
    };
    Ok(Guidance { raw, applied })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    const FIG_LABEL: &str = "Chevrolet Silverado 1500 Extended Cab 2012";
    const FIG_CAPTION: &str = "a 2009 chevrolet silverado in a desert";

    #[test]
    fn label_sentence_templates() {
        assert_eq!(make_label_text("cat", false).unwrap(), "A picture of a cat");
        assert_eq!(
            make_label_text(FIG_LABEL, true).unwrap(),
            "A picture of a [Chevrolet Silverado 1500 Extended Cab 2012]"
        );
        assert_eq!(make_label_text("", false), Err(PromptError::EmptyLabel));
    }

    #[test]
    fn full_prompt_matches_worked_example() {
        let p = build_prompt(FIG_LABEL, Some(FIG_CAPTION), PromptMode::Full, true).unwrap();
        assert_eq!(
            p.rendered_text,
            "A picture of a [Chevrolet Silverado 1500 Extended Cab 2012], a 2009 chevrolet silverado in a desert."
        );
        assert_eq!((p.w_l, p.w_c), (1.5, 0.9));
    }

    #[test]
    fn mode_renderings() {
        let none = build_prompt("cat", Some("x y"), PromptMode::None, false).unwrap();
        assert_eq!(none.rendered_text, "");
        let label = build_prompt("cat", None, PromptMode::LabelOnly, false).unwrap();
        assert_eq!(label.rendered_text, "A picture of a cat.");
        let cap = build_prompt("cat", Some("a cat on a mat"), PromptMode::CaptionOnly, false)
            .unwrap();
        assert_eq!(cap.rendered_text, "a cat on a mat.");
        assert_eq!(
            build_prompt("cat", None, PromptMode::Full, false),
            Err(PromptError::MissingCaption(PromptMode::Full))
        );
        assert_eq!(
            build_prompt("cat", Some("  "), PromptMode::CaptionOnly, false),
            Err(PromptError::MissingCaption(PromptMode::CaptionOnly))
        );
    }

    #[test]
    fn caption_period_is_not_doubled() {
        let p = build_prompt("cat", Some("a cat."), PromptMode::Full, false).unwrap();
        assert_eq!(p.rendered_text, "A picture of a cat, a cat.");
    }

    #[test]
    fn span_map_partitions_tokens() {
        let p = build_prompt(FIG_LABEL, Some(FIG_CAPTION), PromptMode::Full, true).unwrap();
        let map = p.span_map();
        let roles: Vec<_> = map.roles().collect();
        // <bos> A picture of a [ 6 label words ] , 7 caption words . <eos>
        let label = roles.iter().filter(|r| **r == SpanRole::Label).count();
        let caption = roles.iter().filter(|r| **r == SpanRole::Caption).count();
        assert_eq!(label, 4 + 2 + 6);
        assert_eq!(caption, 7);
        assert_eq!(map.len(), label + caption + 4);
        assert_eq!(map.tokens[0].text, BEGIN_MARKER);
        assert_eq!(map.tokens[map.len() - 1].text, END_MARKER);
        // label tokens come strictly before caption tokens
        let last_label = roles.iter().rposition(|r| *r == SpanRole::Label).unwrap();
        let first_caption = roles.iter().position(|r| *r == SpanRole::Caption).unwrap();
        assert!(last_label < first_caption);
        assert_eq!(map.tokens[last_label + 1].text, ",");
    }

    #[test]
    fn weighting_identity_and_scalar() {
        let p = build_prompt("cat", None, PromptMode::LabelOnly, false).unwrap();
        let map = p.span_map();
        let emb = Array2::from_shape_fn((map.len(), 3), |(i, j)| (i * 3 + j) as f64 * 0.37 - 1.0);
        assert_eq!(weight_embeddings(&emb, &map, 1.0, 1.0, false).unwrap(), emb);

        let single = SpanMap::from_roles(&[SpanRole::Label]);
        let e = array![[0.3, -0.4, 1.2]];
        let out = weight_embeddings(&e, &single, 1.5, 0.9, false).unwrap();
        assert_eq!(out, array![[0.3 * 1.5, -0.4 * 1.5, 1.2 * 1.5]]);
    }

    #[test]
    fn weighting_default_norms() {
        use SpanRole::*;
        let map = SpanMap::from_roles(&[Label, Label, Caption, Caption, Caption]);
        let e = array![
            [1.0, 0.0],
            [0.0, 1.0],
            [0.6, 0.8],
            [-0.8, 0.6],
            [0.0, -1.0]
        ];
        let out = weight_embeddings(&e, &map, 1.5, 0.9, false).unwrap();
        let norms: Vec<f64> = out
            .axis_iter(Axis(0))
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let expected = [1.5, 1.5, 0.9, 0.9, 0.9];
        for (n, e) in norms.iter().zip(expected) {
            assert!((n - e).abs() < 1e-12, "{n} vs {e}");
        }
    }

    #[test]
    fn renormalize_restores_mean_norm() {
        use SpanRole::*;
        let map = SpanMap::from_roles(&[Other, Label, Caption, Other]);
        let e = array![[1.0, 0.0], [0.0, 2.0], [3.0, 0.0], [0.0, 1.0]];
        let out = weight_embeddings(&e, &map, 1.5, 0.9, true).unwrap();
        assert!((mean_row_norm(&out) - mean_row_norm(&e)).abs() < 1e-12);
    }

    #[test]
    fn weighting_rejects_mismatch_and_bad_weights() {
        let map = SpanMap::from_roles(&[SpanRole::Other; 3]);
        let e = Array2::<f64>::zeros((2, 4));
        assert_eq!(
            weight_embeddings(&e, &map, 1.0, 1.0, false),
            Err(PromptError::SpanMismatch {
                expected: 3,
                got: 2
            })
        );
        let e = Array2::<f64>::zeros((3, 4));
        assert!(matches!(
            weight_embeddings(&e, &map, 0.0, 1.0, false),
            Err(PromptError::InvalidWeight { .. })
        ));
    }

    #[test]
    fn guidance_values() {
        let cfg = GuidanceConfig::default();
        let g = |s| guidance_scale(s, &cfg).unwrap().raw;
        assert_eq!(g(0.0), 1.0);
        assert_eq!(g(0.25), 1.25);
        assert_eq!(g(0.5), 1.0);
        assert_eq!(g(1.0), -1.0);
        // -4 * 0.3249 + 1.14 + 1
        assert!((g(0.57) - 0.8404).abs() < 1e-12);
        assert_eq!(guidance_scale(1.5, &cfg), Err(PromptError::OutOfRange(1.5)));
        assert!(guidance_scale(f64::NAN, &cfg).is_err());
    }

    #[test]
    fn guidance_floor_and_constant() {
        let cfg = GuidanceConfig {
            floor: Some(1.0),
            ..Default::default()
        };
        let g = guidance_scale(0.57, &cfg).unwrap();
        assert!((g.raw - 0.8404).abs() < 1e-12);
        assert_eq!(g.applied, 1.0);
        let g = guidance_scale(0.25, &cfg).unwrap();
        assert_eq!(g.applied, 1.25);

        let constant = GuidanceConfig {
            mapping: GuidanceMapping::Constant,
            constant_value: Some(7.5),
            ..Default::default()
        };
        assert_eq!(guidance_scale(0.9, &constant).unwrap().applied, 7.5);
        let missing = GuidanceConfig {
            mapping: GuidanceMapping::Constant,
            ..Default::default()
        };
        assert_eq!(
            guidance_scale(0.1, &missing),
            Err(PromptError::MissingConstant)
        );
    }

    #[test]
    fn prompt_mode_parsing() {
        for m in PromptMode::ALL {
            assert_eq!(m.as_str().parse::<PromptMode>().unwrap(), m);
        }
        assert_eq!("label-only".parse::<PromptMode>().unwrap(), PromptMode::LabelOnly);
        assert!("everything".parse::<PromptMode>().is_err());
    }

    proptest! {
        #[test]
        fn guidance_is_concave(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
            let mid = quadratic_guidance((a + b) / 2.0);
            let avg = (quadratic_guidance(a) + quadratic_guidance(b)) / 2.0;
            prop_assert!(mid >= avg - 1e-12);
            prop_assert!(quadratic_guidance(a) <= 1.25);
        }

        #[test]
        fn full_prompt_roundtrips(
            label in "[A-Za-z0-9][A-Za-z0-9 ]{0,30}[A-Za-z0-9]",
            caption in "[a-z0-9][a-z0-9 ,]{0,40}[a-z0-9]",
            bracket in any::<bool>(),
        ) {
            // unbracketed labels must not contain the separator
            prop_assume!(bracket || !label.contains(", "));
            let p = build_prompt(&label, Some(&caption), PromptMode::Full, bracket).unwrap();
            let (l, c) = parse_full_prompt(&p.rendered_text, bracket).unwrap();
            prop_assert_eq!(l, label);
            prop_assert_eq!(c, caption);
        }

        #[test]
        fn weighting_is_linear(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 8), 1..12),
            other in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 8), 12),
            roles_seed in proptest::collection::vec(0u8..3, 12),
        ) {
            let n = rows.len();
            let roles: Vec<SpanRole> = roles_seed[..n].iter().map(|r| match r {
                0 => SpanRole::Label, 1 => SpanRole::Caption, _ => SpanRole::Other
            }).collect();
            let map = SpanMap::from_roles(&roles);
            let a = Array2::from_shape_fn((n, 8), |(i, j)| rows[i][j]);
            let b = Array2::from_shape_fn((n, 8), |(i, j)| other[i][j]);
            let lhs = weight_embeddings(&a, &map, 1.5, 0.9, false).unwrap()
                + weight_embeddings(&b, &map, 1.5, 0.9, false).unwrap();
            let rhs = weight_embeddings(&(&a + &b), &map, 1.5, 0.9, false).unwrap();
            for (x, y) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }
}
