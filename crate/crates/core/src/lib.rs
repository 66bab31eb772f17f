pub mod evaluator;
pub mod numkernel;
pub mod oracle;
pub mod parallel;
pub mod som;
pub mod synthgen;
pub mod trainer;
pub mod treebank;
