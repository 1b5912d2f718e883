#![allow(dead_code)]

pub mod composed;
pub mod gradients;
pub mod itc;
