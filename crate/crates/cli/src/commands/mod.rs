pub mod intervals;
pub mod match_cmd;
pub mod report;
pub mod simulate;
pub mod tune;
