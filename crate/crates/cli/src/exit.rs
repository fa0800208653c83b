//! Maps errors to process exit codes: 0 ok, 1 usage, 2 data, 3 numeric.

use speciescope::dataset::DatasetError;
use speciescope::embed::EmbedError;
use speciescope::explore::ExploreError;
use speciescope::features::FeatureError;
use speciescope::genopredict::GenoError;
use speciescope::learn::LearnError;
use speciescope::measures::MeasureError;
use speciescope::model::ModelError;
use speciescope::stats::StatsError;

pub const OK: i32 = 0;
pub const USAGE: i32 = 1;
pub const DATA: i32 = 2;
pub const NUMERIC: i32 = 3;

/// Invalid flag combinations or values caught by the commands themselves.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// A numeric result that cannot be trusted (divergence, zero variance, ...).
#[derive(Debug)]
pub struct Numeric(pub String);

impl std::fmt::Display for Numeric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Numeric {}

fn learn(e: &LearnError) -> i32 {
    match e {
        LearnError::InvalidSpec(_) | LearnError::InvalidSchedule(_) => USAGE,
        LearnError::Diverged => NUMERIC,
        _ => DATA,
    }
}

fn model(e: &ModelError) -> i32 {
    match e {
        ModelError::Learn(l) => learn(l),
        _ => DATA,
    }
}

pub fn code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return USAGE;
        }
        if cause.is::<Numeric>() {
            return NUMERIC;
        }
        if let Some(e) = cause.downcast_ref::<ExploreError>() {
            return match e {
                ExploreError::OutOfBounds(_) | ExploreError::Image(_) => DATA,
                ExploreError::Model(m) => model(m),
                _ => USAGE,
            };
        }
        if let Some(e) = cause.downcast_ref::<EmbedError>() {
            return match e {
                EmbedError::TooFewPoints { .. } => DATA,
                EmbedError::NonFinite | EmbedError::BadDistances => NUMERIC,
                _ => USAGE,
            };
        }
        if let Some(e) = cause.downcast_ref::<StatsError>() {
            return match e {
                StatsError::ZeroVariance(_) | StatsError::NonFinite => NUMERIC,
                StatsError::InvalidBands(_) | StatsError::UnknownMeasure(_) => USAGE,
                _ => DATA,
            };
        }
        if let Some(e) = cause.downcast_ref::<LearnError>() {
            return learn(e);
        }
        if let Some(e) = cause.downcast_ref::<GenoError>() {
            return match e {
                GenoError::InvalidK { .. } => USAGE,
                GenoError::Learn(l) => learn(l),
                GenoError::Model(m) => model(m),
                GenoError::NoSamples(_) => DATA,
            };
        }
        if let Some(e) = cause.downcast_ref::<FeatureError>() {
            return match e {
                FeatureError::Learn(l) => learn(l),
                FeatureError::Model(m) => model(m),
                _ => DATA,
            };
        }
        if let Some(e) = cause.downcast_ref::<MeasureError>() {
            return match e {
                MeasureError::InvalidParams(_) | MeasureError::InvalidThreshold(_) => USAGE,
                _ => DATA,
            };
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model(e);
        }
        if cause.is::<DatasetError>() || cause.is::<std::io::Error>() {
            return DATA;
        }
    }
    DATA
}
