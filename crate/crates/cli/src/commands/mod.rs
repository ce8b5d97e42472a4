pub mod correlate;
pub mod evaluate;
pub mod probe;
pub mod score;
pub mod simulate;
