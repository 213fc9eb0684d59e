#![allow(dead_code)]

pub mod gae;
pub mod geometry;
pub mod gradcheck;
