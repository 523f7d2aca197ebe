use zcnas::archspace::SpaceError;
use zcnas::autodiff::AutodiffError;
use zcnas::io::IoError;
use zcnas::selector::SelectorError;
use zcnas::supernet::SupernetError;
use zcnas::trainer::TrainError;
use zcnas::zerocost::ZeroCostError;

pub const OTHER: u8 = 1;
pub const CONFIG: u8 = 2;
pub const DATA: u8 = 3;
pub const NUMERIC: u8 = 4;

/// Failure raised by the CLI itself with a fixed exit code.
#[derive(Debug)]
pub struct Coded(pub u8, pub String);

impl std::fmt::Display for Coded {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Coded {}

pub fn config(msg: impl Into<String>) -> anyhow::Error {
    Coded(CONFIG, msg.into()).into()
}

pub fn data(msg: impl Into<String>) -> anyhow::Error {
    Coded(DATA, msg.into()).into()
}

pub fn code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        let c = if let Some(Coded(c, _)) = cause.downcast_ref() {
            Some(*c)
        } else if let Some(e) = cause.downcast_ref::<IoError>() {
            Some(io(e))
        } else if let Some(e) = cause.downcast_ref::<TrainError>() {
            Some(train(e))
        } else if let Some(e) = cause.downcast_ref::<SelectorError>() {
            Some(selector(e))
        } else if let Some(e) = cause.downcast_ref::<ZeroCostError>() {
            Some(zerocost(e))
        } else if let Some(e) = cause.downcast_ref::<SupernetError>() {
            Some(supernet(e))
        } else if let Some(e) = cause.downcast_ref::<AutodiffError>() {
            Some(autodiff(e))
        } else if cause.downcast_ref::<SpaceError>().is_some() {
            Some(CONFIG)
        } else if cause.downcast_ref::<csv::Error>().is_some() {
            Some(DATA)
        } else {
            None
        };
        if let Some(c) = c {
            return c;
        }
    }
    OTHER
}

fn io(e: &IoError) -> u8 {
    match e {
        IoError::Config(_) | IoError::Version { .. } => CONFIG,
        IoError::Io { .. } | IoError::Format(_) | IoError::SpecMismatch { .. } => DATA,
    }
}

fn train(e: &TrainError) -> u8 {
    match e {
        TrainError::Config(_) => CONFIG,
        TrainError::Data(_) => DATA,
        TrainError::Diverged { .. } => NUMERIC,
        TrainError::Supernet(s) => supernet(s),
    }
}

fn selector(e: &SelectorError) -> u8 {
    match e {
        SelectorError::Contract(_) | SelectorError::Space(_) => CONFIG,
        SelectorError::ZeroCost(z) => zerocost(z),
        SelectorError::NoFit(_) => OTHER,
    }
}

fn zerocost(e: &ZeroCostError) -> u8 {
    match e {
        ZeroCostError::Supernet(s) => supernet(s),
        ZeroCostError::NonFinite(_) => NUMERIC,
        ZeroCostError::Arch(_) => CONFIG,
        ZeroCostError::Contract(_) => OTHER,
    }
}

fn supernet(e: &SupernetError) -> u8 {
    match e {
        SupernetError::Space(_) | SupernetError::Slice(_) => CONFIG,
        SupernetError::Autodiff(a) => autodiff(a),
        SupernetError::Input(_) => DATA,
    }
}

fn autodiff(e: &AutodiffError) -> u8 {
    match e {
        AutodiffError::NonFinite(_) => NUMERIC,
        _ => OTHER,
    }
}
