use matrixpower::asymptotics::AsymptoticsError;
use matrixpower::estimators::EstimatorError;
use matrixpower::experiments::ExperimentError;
use matrixpower::moments::MomentsError;
use matrixpower::power::PowerError;
use matrixpower::{DesignError, NumericsError};
use thiserror::Error;

/// Exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Usage = 1,
    Domain = 2,
    Numerical = 3,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error(transparent)]
    Asymptotics(#[from] AsymptoticsError),
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        self.classify().1 as u8
    }

    /// Name of the innermost error variant.
    pub fn kind(&self) -> &'static str {
        self.classify().0
    }

    fn classify(&self) -> (&'static str, Class) {
        match self {
            CliError::Usage(_) => ("Usage", Class::Usage),
            CliError::Design(e) => design(e),
            CliError::Moments(e) => moments(e),
            CliError::Asymptotics(e) => asymptotics(e),
            CliError::Power(e) => power(e),
            CliError::Experiment(e) => experiment(e),
            CliError::Io(_) => ("Io", Class::Usage),
            CliError::Json(_) => ("Json", Class::Usage),
        }
    }
}

fn numerics(e: &NumericsError) -> (&'static str, Class) {
    match e {
        NumericsError::NotPositiveDefinite { .. } => ("NotPositiveDefinite", Class::Numerical),
        NumericsError::NotSymmetric { .. } => ("NotSymmetric", Class::Numerical),
        NumericsError::NoConvergence { .. } => ("NoConvergence", Class::Numerical),
        NumericsError::DimensionMismatch(_) => ("DimensionMismatch", Class::Numerical),
        NumericsError::Domain(_) => ("Domain", Class::Domain),
    }
}

fn design(e: &DesignError) -> (&'static str, Class) {
    match e {
        DesignError::Schema(_) => ("Schema", Class::Usage),
        DesignError::Invariant(_) => ("Invariant", Class::Usage),
        DesignError::Index { .. } => ("Index", Class::Domain),
        DesignError::Domain(_) => ("Domain", Class::Domain),
    }
}

fn moments(e: &MomentsError) -> (&'static str, Class) {
    match e {
        MomentsError::Numerics(n) => numerics(n),
        MomentsError::Domain(_) => ("Domain", Class::Domain),
        MomentsError::NoRealRoot { .. } => ("NoRealRoot", Class::Domain),
        MomentsError::Index(_) => ("Index", Class::Domain),
        MomentsError::Schema(_) => ("Schema", Class::Usage),
    }
}

fn asymptotics(e: &AsymptoticsError) -> (&'static str, Class) {
    match e {
        AsymptoticsError::Numerics(n) => numerics(n),
        AsymptoticsError::Moments(m) => moments(m),
        AsymptoticsError::Design(d) => design(d),
        AsymptoticsError::SingularInformation { .. } => ("SingularInformation", Class::Domain),
        AsymptoticsError::Data(_) => ("Data", Class::Usage),
    }
}

fn power(e: &PowerError) -> (&'static str, Class) {
    match e {
        PowerError::Numerics(n) => numerics(n),
        PowerError::Moments(m) => moments(m),
        PowerError::Asymptotics(a) => asymptotics(a),
        PowerError::DegenerateConstraint => ("DegenerateConstraint", Class::Domain),
        PowerError::NoEffect => ("NoEffect", Class::Domain),
        PowerError::Domain(_) => ("Domain", Class::Domain),
    }
}

fn estimator(e: &EstimatorError) -> (&'static str, Class) {
    match e {
        EstimatorError::Numerics(n) => numerics(n),
        EstimatorError::Moments(m) => moments(m),
        EstimatorError::Asymptotics(a) => asymptotics(a),
        EstimatorError::RankDeficient => ("RankDeficient", Class::Numerical),
        EstimatorError::NonConvergence { .. } => ("NonConvergence", Class::Numerical),
        EstimatorError::InsufficientDonors { .. } => ("InsufficientDonors", Class::Domain),
        EstimatorError::Domain(_) => ("Domain", Class::Domain),
    }
}

fn experiment(e: &ExperimentError) -> (&'static str, Class) {
    match e {
        ExperimentError::Numerics(n) => numerics(n),
        ExperimentError::Moments(m) => moments(m),
        ExperimentError::Design(d) => design(d),
        ExperimentError::Asymptotics(a) => asymptotics(a),
        ExperimentError::Power(p) => power(p),
        ExperimentError::Estimator(x) => estimator(x),
        ExperimentError::Data(_) => ("Data", Class::Usage),
        ExperimentError::Allocation(_) => ("Allocation", Class::Domain),
        ExperimentError::Config(_) => ("Config", Class::Usage),
        ExperimentError::Csv(_) => ("Csv", Class::Usage),
        ExperimentError::Io(_) => ("Io", Class::Usage),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_errors_keep_their_class() {
        let e = CliError::Power(PowerError::Asymptotics(
            AsymptoticsError::SingularInformation {
                uncovered: vec![("x1".into(), "x2".into())],
            },
        ));
        assert_eq!((e.kind(), e.exit_code()), ("SingularInformation", 2));
        let e = CliError::Asymptotics(AsymptoticsError::Numerics(
            NumericsError::NotPositiveDefinite { pivot: 1 },
        ));
        assert_eq!(e.exit_code(), 3);
        assert_eq!(CliError::Power(PowerError::NoEffect).exit_code(), 2);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
    }
}
