use serde::{Deserialize, Serialize};

use super::layers::{GroupingConfig, MeteorLayerConfig, MeteorMode, SampleCount, SetAbstractionConfig};
use crate::error::{Error, Result};
use crate::nncore::MlpSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Frames are mixed by a Meteor layer at the first layer.
    Early,
    /// Per-frame set abstraction runs before the first Meteor layer.
    Late,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EncoderLayer {
    Meteor(MeteorLayerConfig),
    SetAbstraction(SetAbstractionConfig),
}

impl EncoderLayer {
    pub fn mlp(&self) -> &MlpSpec {
        match self {
            EncoderLayer::Meteor(c) => &c.mlp,
            EncoderLayer::SetAbstraction(c) => &c.mlp,
        }
    }

    fn expected_input(&self, c_in: usize) -> usize {
        match self {
            EncoderLayer::Meteor(c) => c.expected_input(c_in),
            EncoderLayer::SetAbstraction(c) => c.expected_input(c_in),
        }
    }
}

fn default_k() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpConfig {
    pub mlp: MlpSpec,
    #[serde(default = "default_k")]
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    SequenceClass,
    PerPointClass,
    LastFrameFlow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub kind: HeadKind,
    /// Feature propagation stages, coarsest first; one per encoder layer. Unused by
    /// sequence-class heads.
    #[serde(default)]
    pub fp: Vec<FpConfig>,
    /// Fully-connected head; emits raw logits / regression values.
    pub mlp: MlpSpec,
    /// Dropout on the input of the last fully-connected layer.
    #[serde(default)]
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    pub fusion: Fusion,
    pub input_channels: usize,
    /// Coordinates and flows are multiplied by this before entering the network; radii are
    /// expressed in scaled units.
    #[serde(default = "unit_scale")]
    pub coord_scale: f64,
    pub encoder: Vec<EncoderLayer>,
    pub head: HeadSpec,
}

fn unit_scale() -> f64 {
    1.0
}

impl ArchitectureSpec {
    /// Feature channels of every level: the input, then each encoder layer's output.
    pub fn level_channels(&self) -> Vec<usize> {
        let mut ch = vec![self.input_channels];
        ch.extend(self.encoder.iter().map(|l| l.mlp().output()));
        ch
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Construction(format!("{}: {m}", self.name)));
        if !(self.coord_scale > 0.0 && self.coord_scale.is_finite()) {
            return bad("coordinate scale must be positive".into());
        }
        let first = match self.encoder.first() {
            Some(l) => l,
            None => return bad("encoder is empty".into()),
        };
        let has_meteor = self.encoder.iter().any(|l| matches!(l, EncoderLayer::Meteor(_)));
        match self.fusion {
            Fusion::Early if !matches!(first, EncoderLayer::Meteor(_)) => {
                return bad("early fusion requires a Meteor layer first".into())
            }
            Fusion::Late if !matches!(first, EncoderLayer::SetAbstraction(_)) || !has_meteor => {
                return bad("late fusion requires per-frame set abstraction before a Meteor layer".into())
            }
            _ => {}
        }
        let mut c = self.input_channels;
        for (i, layer) in self.encoder.iter().enumerate() {
            layer.mlp().validate()?;
            let want = layer.expected_input(c);
            if layer.mlp().input != want {
                return bad(format!("encoder layer {i} MLP input {} but {want} channels arrive", layer.mlp().input));
            }
            if let EncoderLayer::Meteor(m) = layer {
                m.grouping.schedule()?;
            }
            if let EncoderLayer::SetAbstraction(s) = layer {
                if !(s.radius > 0.0) {
                    return bad(format!("encoder layer {i} radius must be positive"));
                }
            }
            c = layer.mlp().output();
        }
        if !(0.0..1.0).contains(&self.head.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        self.head.mlp.validate()?;
        match self.head.kind {
            HeadKind::SequenceClass => {
                if !self.head.fp.is_empty() {
                    return bad("sequence-class heads take no feature propagation".into());
                }
            }
            HeadKind::PerPointClass | HeadKind::LastFrameFlow => {
                let ch = self.level_channels();
                let m = self.encoder.len();
                if self.head.fp.len() != m {
                    return bad(format!("{} feature propagation stages for {m} encoder layers", self.head.fp.len()));
                }
                for (i, fp) in self.head.fp.iter().enumerate() {
                    fp.mlp.validate()?;
                    if fp.k == 0 {
                        return bad("feature propagation needs k >= 1".into());
                    }
                    let skip = ch[m - 1 - i];
                    let want = c + skip;
                    if fp.mlp.input != want {
                        return bad(format!("feature propagation {i} MLP input {} but {want} channels arrive", fp.mlp.input));
                    }
                    c = fp.mlp.output();
                }
                if self.head.kind == HeadKind::LastFrameFlow {
                    if !has_meteor {
                        return bad("flow head needs a Meteor layer".into());
                    }
                    if self.head.mlp.output() != 3 {
                        return bad("flow head must emit 3 channels".into());
                    }
                }
            }
        }
        if self.head.mlp.input != c {
            return bad(format!("head MLP input {} but {c} channels arrive", self.head.mlp.input));
        }
        if self.head.kind != HeadKind::LastFrameFlow && self.head.mlp.output() < 2 {
            return bad("classification heads need at least two classes".into());
        }
        Ok(())
    }
}

/// Knobs shared by the named presets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetOptions {
    pub input_channels: usize,
    pub classes: usize,
    /// Every hidden width is divided by this (minimum 1); handy for micro instances.
    pub width_divisor: usize,
}

pub const PRESET_NAMES: [&str; 6] =
    ["toy-cls", "meteornet-cls", "meteornet-seg-s", "meteornet-seg-m", "meteornet-seg-l", "meteornet-flow"];

/// MeteorNet-seg widths of the four Meteor modules for variants s, m and l.
pub fn seg_widths(variant: char) -> Option<[[usize; 3]; 4]> {
    match variant {
        's' => Some([[32, 32, 64], [64, 64, 128], [128, 128, 256], [256, 256, 512]]),
        'm' => Some([[32, 32, 128], [64, 64, 256], [128, 128, 512], [256, 256, 1024]]),
        'l' => Some([[32, 64, 128], [64, 128, 256], [128, 256, 512], [256, 512, 1024]]),
        _ => None,
    }
}

fn shrink(ws: &[usize], div: usize) -> Vec<usize> {
    ws.iter().map(|w| (w / div.max(1)).max(1)).collect()
}

fn meteor(mode: MeteorMode, grouping: GroupingConfig, tau: usize, c_in: usize, widths: Vec<usize>, down: Option<SampleCount>) -> EncoderLayer {
    let cfg = MeteorLayerConfig {
        mode,
        grouping,
        temporal_radius: tau,
        mlp: MlpSpec::new(0, &widths),
        downsample: down,
        max_per_frame: None,
    };
    let input = cfg.expected_input(c_in);
    EncoderLayer::Meteor(MeteorLayerConfig { mlp: MlpSpec::new(input, &widths), ..cfg })
}

fn set_abstraction(c_in: usize, widths: Vec<usize>, radius: f64, samples: SampleCount) -> EncoderLayer {
    EncoderLayer::SetAbstraction(SetAbstractionConfig {
        samples,
        radius,
        mlp: MlpSpec::new(c_in + 3, &widths),
        max_per_frame: None,
    })
}

fn decoder(channels: &[usize], fp_widths: &[Vec<usize>]) -> (Vec<FpConfig>, usize) {
    let m = channels.len() - 1;
    let mut c = channels[m];
    let mut fps = Vec::with_capacity(m);
    for (i, w) in fp_widths.iter().enumerate() {
        let skip = channels[m - 1 - i];
        fps.push(FpConfig { mlp: MlpSpec::new(c + skip, w), k: 3 });
        c = *w.last().unwrap();
    }
    (fps, c)
}

fn finish(name: &str, fusion: Fusion, opts: &PresetOptions, scale: f64, encoder: Vec<EncoderLayer>, head: HeadSpec) -> ArchitectureSpec {
    ArchitectureSpec {
        name: name.to_string(),
        fusion,
        input_channels: opts.input_channels,
        coord_scale: scale,
        encoder,
        head,
    }
}

/// Toy classifier: one Meteor-ind layer with MLP [16, 16], global max pool, one
/// fully-connected layer. Coordinates are divided by the 100-unit cube side.
pub fn toy_cls() -> ArchitectureSpec {
    let enc = vec![meteor(MeteorMode::Ind, GroupingConfig::Direct { r0: 0.5, alpha: 0.0 }, 3, 0, vec![16, 16], None)];
    let head = HeadSpec { kind: HeadKind::SequenceClass, fp: Vec::new(), mlp: MlpSpec::linear_head(16, &[4]), dropout: 0.0 };
    finish("toy-cls", Fusion::Early, &PresetOptions { input_channels: 0, classes: 4, width_divisor: 1 }, 0.01, enc, head)
}

/// Four Meteor-ind layers with early fusion, FPS halving per stage, global max pool and a
/// dropout-regularized fully-connected head.
pub fn meteornet_cls(opts: &PresetOptions) -> ArchitectureSpec {
    let d = opts.width_divisor;
    let widths = [[32, 32, 128], [64, 64, 256], [128, 128, 512], [256, 256, 1024]];
    let radii = [0.1, 0.2, 0.4, 0.8];
    let mut enc = Vec::new();
    let mut c = opts.input_channels;
    for (w, r) in widths.iter().zip(radii) {
        let ws = shrink(w, d);
        enc.push(meteor(
            MeteorMode::Ind,
            GroupingConfig::Direct { r0: r, alpha: r / 2.0 },
            1,
            c,
            ws.clone(),
            Some(SampleCount::Fraction(0.5)),
        ));
        c = *ws.last().unwrap();
    }
    let hidden = shrink(&[256], d)[0];
    let head = HeadSpec {
        kind: HeadKind::SequenceClass,
        fp: Vec::new(),
        mlp: MlpSpec::linear_head(c, &[hidden, opts.classes]),
        dropout: 0.5,
    };
    finish("meteornet-cls", Fusion::Early, opts, 1.0, enc, head)
}

/// MeteorNet-seg, variant `s`, `m` or `l`: four Meteor-ind layers, then feature
/// propagation back to every input point with skip links.
pub fn meteornet_seg(variant: char, opts: &PresetOptions) -> Result<ArchitectureSpec> {
    let widths = seg_widths(variant)
        .ok_or_else(|| Error::Construction(format!("unknown MeteorNet-seg variant {variant:?}")))?;
    let d = opts.width_divisor;
    let radii = [0.5, 1.0, 2.0, 4.0];
    let mut enc = Vec::new();
    let mut ch = vec![opts.input_channels];
    for (w, r) in widths.iter().zip(radii) {
        let ws = shrink(w, d);
        enc.push(meteor(
            MeteorMode::Ind,
            GroupingConfig::Direct { r0: r, alpha: r / 2.0 },
            1,
            *ch.last().unwrap(),
            ws.clone(),
            Some(SampleCount::Fraction(0.5)),
        ));
        ch.push(*ws.last().unwrap());
    }
    let fp_w: Vec<Vec<usize>> = [vec![256, 256], vec![256, 256], vec![256, 128], vec![128, 128]]
        .iter()
        .map(|w| shrink(w, d))
        .collect();
    let (fp, c) = decoder(&ch, &fp_w);
    let head = HeadSpec {
        kind: HeadKind::PerPointClass,
        fp,
        mlp: MlpSpec::linear_head(c, &[shrink(&[128], d)[0], opts.classes]),
        dropout: 0.5,
    };
    Ok(finish(&format!("meteornet-seg-{variant}"), Fusion::Early, opts, 1.0, enc, head))
}

/// MeteorNet-flow: two per-frame set abstraction layers, one Meteor-rel layer mixing all
/// frames, one more set abstraction, then the frame-T points are upsampled back with
/// skip links and regressed to 3-D flow.
pub fn meteornet_flow(opts: &PresetOptions) -> ArchitectureSpec {
    let d = opts.width_divisor;
    let mut ch = vec![opts.input_channels];
    let mut enc = Vec::new();
    let sa1 = shrink(&[32, 32, 64], d);
    enc.push(set_abstraction(ch[0], sa1.clone(), 0.5, SampleCount::Fraction(0.5)));
    ch.push(*sa1.last().unwrap());
    let sa2 = shrink(&[64, 64, 128], d);
    enc.push(set_abstraction(ch[1], sa2.clone(), 1.0, SampleCount::Fraction(0.5)));
    ch.push(*sa2.last().unwrap());
    let rel = shrink(&[128, 128, 128], d);
    enc.push(meteor(MeteorMode::Rel, GroupingConfig::Direct { r0: 2.0, alpha: 1.0 }, 2, ch[2], rel.clone(), None));
    ch.push(*rel.last().unwrap());
    let sa3 = shrink(&[128, 128, 256], d);
    enc.push(set_abstraction(ch[3], sa3.clone(), 2.0, SampleCount::Fraction(0.5)));
    ch.push(*sa3.last().unwrap());
    let fp_w: Vec<Vec<usize>> =
        [vec![256, 256], vec![256, 256], vec![256, 128], vec![128, 128]].iter().map(|w| shrink(w, d)).collect();
    let (fp, c) = decoder(&ch, &fp_w);
    let head = HeadSpec {
        kind: HeadKind::LastFrameFlow,
        fp,
        mlp: MlpSpec::linear_head(c, &[shrink(&[128], d)[0], 3]),
        dropout: 0.0,
    };
    finish("meteornet-flow", Fusion::Late, opts, 1.0, enc, head)
}

/// Looks up a preset by name. `toy-cls` ignores `opts`.
pub fn preset(name: &str, opts: &PresetOptions) -> Result<ArchitectureSpec> {
    let spec = match name {
        "toy-cls" => toy_cls(),
        "meteornet-cls" => meteornet_cls(opts),
        "meteornet-seg-s" => meteornet_seg('s', opts)?,
        "meteornet-seg-m" => meteornet_seg('m', opts)?,
        "meteornet-seg-l" => meteornet_seg('l', opts)?,
        "meteornet-flow" => meteornet_flow(opts),
        other => return Err(Error::Config(format!("unknown architecture {other:?}"))),
    };
    spec.validate()?;
    Ok(spec)
}

/// Default options for a preset name: class counts of the datasets the presets were
/// designed for (20 action classes, 12 segmentation classes).
pub fn default_options(name: &str) -> PresetOptions {
    match name {
        "meteornet-cls" => PresetOptions { input_channels: 0, classes: 20, width_divisor: 1 },
        n if n.starts_with("meteornet-seg") => PresetOptions { input_channels: 3, classes: 12, width_divisor: 1 },
        "meteornet-flow" => PresetOptions { input_channels: 3, classes: 3, width_divisor: 1 },
        _ => PresetOptions { input_channels: 0, classes: 4, width_divisor: 1 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in PRESET_NAMES {
            let spec = preset(name, &default_options(name)).unwrap();
            assert_eq!(spec.name, name);
        }
    }

    #[test]
    fn toy_preset_matches_table() {
        let spec = toy_cls();
        assert_eq!(spec.encoder.len(), 1);
        let EncoderLayer::Meteor(m) = &spec.encoder[0] else { panic!() };
        assert_eq!(m.mode, MeteorMode::Ind);
        assert_eq!(m.mlp.widths, vec![16, 16]);
        assert_eq!(m.mlp.input, 4);
        assert_eq!(spec.head.kind, HeadKind::SequenceClass);
        assert_eq!(spec.head.mlp.widths, vec![4]);
    }

    #[test]
    fn seg_presets_expose_table_widths() {
        let opts = default_options("meteornet-seg-s");
        for (v, first, last) in [('s', [32, 32, 64], [256, 256, 512]), ('m', [32, 32, 128], [256, 256, 1024]), ('l', [32, 64, 128], [256, 512, 1024])] {
            let spec = meteornet_seg(v, &opts).unwrap();
            assert_eq!(spec.encoder[0].mlp().widths, first.to_vec());
            assert_eq!(spec.encoder[3].mlp().widths, last.to_vec());
            assert!(spec.encoder.iter().all(|l| matches!(l, EncoderLayer::Meteor(m) if m.mode == MeteorMode::Ind)));
        }
        assert!(meteornet_seg('x', &opts).is_err());
    }

    #[test]
    fn flow_preset_structure() {
        let spec = meteornet_flow(&default_options("meteornet-flow"));
        assert_eq!(spec.fusion, Fusion::Late);
        let rel: Vec<_> = spec
            .encoder
            .iter()
            .filter(|l| matches!(l, EncoderLayer::Meteor(m) if m.mode == MeteorMode::Rel))
            .collect();
        assert_eq!(rel.len(), 1);
        assert_eq!(spec.head.mlp.output(), 3);
    }

    #[test]
    fn inconsistent_widths_rejected() {
        let mut spec = toy_cls();
        spec.head.mlp.input = 15;
        assert!(matches!(spec.validate(), Err(Error::Construction(_))));
        let mut spec = meteornet_seg('s', &default_options("meteornet-seg-s")).unwrap();
        spec.head.fp[1].mlp.input += 1;
        assert!(spec.validate().is_err());
        let mut spec = toy_cls();
        spec.fusion = Fusion::Late;
        assert!(spec.validate().is_err());
        assert!(preset("nope", &default_options("nope")).is_err());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = meteornet_flow(&default_options("meteornet-flow"));
        let text = toml::to_string(&spec).unwrap();
        let back: ArchitectureSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
