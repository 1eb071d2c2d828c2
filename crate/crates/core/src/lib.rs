//! Simulated ground-robot perception pipeline: a synthetic camera and
//! odometry source, metric scaling of monocular visual odometry, obstacle
//! boundary extraction, ground projection and occupancy mapping, all wired
//! through an in-process publish/subscribe bus.

pub mod alignment;
pub mod bus;
pub mod context;
pub mod control;
pub mod geometry;
pub mod mapping;
pub mod mask;
pub mod msg;
pub mod pipeline;
pub mod scenario;
pub mod sim;
pub mod slam;
pub mod trajectory;
