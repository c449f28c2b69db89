pub mod geometry;
pub mod kernel;
pub mod plan;
pub mod rng;
pub mod trace;
pub mod routing;
pub mod ads;
pub mod market;
pub mod carla;
pub mod support;
pub mod scenario;
pub mod sim;
pub mod metrics;
pub mod run;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/running.md")]
mod book_running {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/scenarios.md")]
mod book_scenarios {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/model.md")]
mod book_model {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/library.md")]
mod book_library {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/traces.md")]
mod book_traces {}
