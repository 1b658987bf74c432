pub mod arima;
pub mod error;
pub mod ingestion;
mod linalg;
pub mod money;
pub mod month;
mod optim;
pub mod spline;
pub mod stationarity;
pub mod timeseries;

pub use error::{Error, Result};
pub use money::Cents;
pub use month::MonthKey;
pub use timeseries::MonthlySeries;
pub mod pricing;
pub mod audit;
pub mod fixture;
pub mod pipeline;
