//! Benchmark fixtures.

use gmmu_core::combination::{enumerate_combinations, CombinationTable};
use gmmu_core::gem::{evaluate, Responsibilities};
use gmmu_core::synth::{gen_scene, supervised_preset, GroundTruthBundle};
use gmmu_core::{pca_fit, EndmemberGmmSet, NoiseModel, PixelGraph};
use nalgebra::{DMatrix, DVector};

/// A synthetic scene projected to a PCA subspace, with everything one
/// GEM iteration needs.
pub struct Fixture {
    pub bundle: GroundTruthBundle,
    pub pixels: Vec<DVector<f64>>,
    pub theta: EndmemberGmmSet,
    pub table: CombinationTable,
    pub noise: DMatrix<f64>,
    pub graph: PixelGraph,
    pub a: DMatrix<f64>,
    pub gamma: Responsibilities,
}

impl Fixture {
    pub fn supervised(seed: u64, dim: usize) -> Self {
        let bundle = gen_scene(&supervised_preset(seed)).expect("preset scene");
        let basis = pca_fit(&bundle.cube, dim).expect("pca");
        let pixels = basis.project_cube(&bundle.cube).expect("projection").pixels();
        let theta = basis.project_model(&bundle.theta).expect("projected model");
        let table = enumerate_combinations(&theta).expect("combinations");
        let noise = basis.project_noise(&NoiseModel::isotropic(bundle.cube.n_bands(), 0.001).unwrap()).unwrap().matrix().clone();
        let graph = PixelGraph::new(&bundle.cube, None, 5.0, 5.0).expect("graph");
        let a = bundle.abundances.clone();
        let (_, gamma) = evaluate(&pixels, &a, &table, &noise, &graph).expect("objective");
        Fixture {
            bundle,
            pixels,
            theta,
            table,
            noise,
            graph,
            a,
            gamma,
        }
    }

    pub fn rows(&self) -> usize {
        self.bundle.cube.rows()
    }

    pub fn cols(&self) -> usize {
        self.bundle.cube.cols()
    }
}
