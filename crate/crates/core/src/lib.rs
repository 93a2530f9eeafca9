pub mod numerics;
pub mod observable;
pub mod parallel;
pub mod rng;
pub mod sampler;
pub mod system;
pub mod tower;
pub mod billiards;
pub mod statistics;
pub mod martingale;
pub mod ratefit;
pub mod oracle;
pub mod runner;
