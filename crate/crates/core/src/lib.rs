pub mod formula;
pub mod graph;
pub mod guard;
pub mod automaton;
pub mod hoa;
pub mod live;
pub mod taskplanner;
pub mod dslib;
pub mod qpsolver;
pub mod monitor;
pub mod motionplanner;
pub mod scenario;
pub mod sim;
pub mod trace;
