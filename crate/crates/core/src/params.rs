//! Named parameter traversal shared by the weight store, the cost counter and
//! the initializers.

/// Trainable parameters are counted in model size; buffers (BN running
/// statistics) are persisted but not counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    Buffer,
}

/// What a parameter is for; initializers use it to choose a distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
    BnMean,
    BnVar,
    ALog,
    DtBias,
    DSkip,
}

impl ParamRole {
    pub fn kind(self) -> ParamKind {
        match self {
            ParamRole::BnMean | ParamRole::BnVar => ParamKind::Buffer,
            _ => ParamKind::Trainable,
        }
    }
}

pub struct ParamView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
    pub data: &'a [f32],
}

pub struct ParamViewMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
    pub data: &'a mut Vec<f32>,
}

pub trait HasParams {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(ParamView<'a>));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamViewMut<'_>));

    fn param_count(&self, kind: ParamKind) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |p| {
            if p.role.kind() == kind {
                n += p.data.len();
            }
        });
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
