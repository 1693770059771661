//! The three- and four-state building models with their default parameter
//! catalogs.

use crate::param::{Parameter, ParameterSpace, Prior, Transform};

use super::network::{EdgeSpec, GainSpec, NodeSpec, ThermalNetwork, ThermalNetworkSpec};

/// Capacities of the built-in models are expressed in units of 1e8 J/K.
pub const CAPACITY_SCALE: f64 = 1e8;

/// A ready-to-use network with its parameter catalog and nominal values.
#[derive(Debug, Clone)]
pub struct BuiltinModel {
    pub name: &'static str,
    pub network: ThermalNetwork,
    pub space: ParameterSpace,
    /// Representative parameter values (posterior modes of a real house).
    pub nominal: Vec<f64>,
}

fn beta(name: &str, lo: f64, hi: f64) -> Parameter {
    Parameter::new(name, Transform::Logit { lo, hi }, Prior::Beta { a: 2.0, b: 2.0, lo, hi })
}

fn noise(name: &str) -> Parameter {
    Parameter::new(name, Transform::Log, Prior::Gamma { shape: 2.0, mean: 0.03 })
}

fn node(name: &str, capacity: &str, noise: &str, initial: Option<&str>) -> NodeSpec {
    NodeSpec {
        name: name.into(),
        capacity: capacity.into(),
        process_noise: noise.into(),
        initial: initial.map(Into::into),
    }
}

fn edge(r: &str, from: &str, to: &str) -> EdgeSpec {
    EdgeSpec { resistance: r.into(), from: from.into(), to: to.into() }
}

fn m3_spec(scale: f64) -> ThermalNetworkSpec {
    ThermalNetworkSpec {
        nodes: vec![
            node("x_w", "C_w", "sigma_w11", Some("x_w0")),
            node("x_i", "C_i", "sigma_w22", None),
            node("x_m", "C_m", "sigma_w33", Some("x_m0")),
        ],
        edges: vec![
            edge("R_o", "T_o", "x_w"),
            edge("R_i", "x_w", "x_i"),
            edge("R_m", "x_i", "x_m"),
            edge("R_z", "T_z", "x_i"),
        ],
        boundaries: vec!["T_o".into(), "T_z".into()],
        heat_inputs: vec!["Q_gh".into(), "Q_h".into()],
        gains: vec![
            GainSpec { signal: "Q_gh".into(), node: "x_w".into(), gain: Some("a_w".into()) },
            GainSpec { signal: "Q_gh".into(), node: "x_i".into(), gain: Some("a_l".into()) },
            GainSpec { signal: "Q_h".into(), node: "x_i".into(), gain: None },
        ],
        outputs: vec!["x_i".into()],
        output_signal: "T_s".into(),
        measurement_noise: "sigma_v".into(),
        capacity_scale: scale,
    }
}

/// Three-state model: envelope, indoor air and internal mass.
pub fn m3() -> BuiltinModel {
    m3_with_scale(CAPACITY_SCALE)
}

pub(crate) fn m3_with_scale(scale: f64) -> BuiltinModel {
    let params = vec![
        beta("R_o", 1e-4, 2e-1),
        beta("R_i", 1e-4, 2e-1),
        beta("R_m", 1e-4, 1e-1),
        beta("R_z", 1e-4, 1e-1),
        beta("C_w", 1e-3, 5e-1),
        beta("C_i", 1e-4, 1e-1),
        beta("C_m", 1e-2, 5.0),
        beta("a_w", 1e-1, 5.0),
        beta("a_l", 1e-1, 5.0),
        noise("sigma_w11"),
        noise("sigma_w22"),
        noise("sigma_w33"),
        noise("sigma_v"),
        beta("x_w0", 15.0, 45.0),
        beta("x_m0", 15.0, 45.0),
    ];
    let nominal = vec![
        5.53e-2, 2.09e-3, 2.31e-3, 4.98e-3, 3.12e-2, 6.73e-3, 1.38e-1, 1.06, 1.24, 1.02e-1, 1.38e-2,
        1.82e-2, 1.69e-2, 29.20, 29.45,
    ];
    let space = ParameterSpace::new(params).expect("valid catalog");
    let network = ThermalNetwork::new(m3_spec(scale), &space.names()).expect("valid network");
    BuiltinModel { name: "M3", network, space, nominal }
}

/// Four-state model: the three-state model plus a sensor node coupled to
/// the indoor air, which becomes the measured output.
pub fn m4() -> BuiltinModel {
    let mut spec = m3_spec(CAPACITY_SCALE);
    spec.nodes[1].initial = Some("x_i0".into());
    spec.nodes.push(node("x_s", "C_s", "sigma_w44", None));
    spec.edges.push(edge("R_s", "x_i", "x_s"));
    spec.outputs = vec!["x_s".into()];
    let params = vec![
        beta("R_o", 1e-4, 1e-1),
        beta("R_i", 1e-4, 1e-1),
        beta("R_m", 1e-4, 1e-1),
        beta("R_s", 1e-3, 5e-2),
        beta("R_z", 1e-4, 1e-1),
        beta("C_w", 1e-3, 5e-1),
        beta("C_i", 1e-4, 1e-2),
        beta("C_m", 1e-2, 5.0),
        beta("C_s", 1e-5, 1e-3),
        beta("a_w", 1e-1, 5.0),
        beta("a_l", 1e-1, 5.0),
        noise("sigma_w11"),
        noise("sigma_w22"),
        noise("sigma_w33"),
        Parameter::new("sigma_w44", Transform::Fixed { value: 1e-6 }, Prior::Flat),
        noise("sigma_v"),
        beta("x_w0", 15.0, 45.0),
        beta("x_m0", 15.0, 45.0),
        beta("x_i0", 15.0, 45.0),
    ];
    let nominal = vec![
        4.93e-2, 1.83e-3, 2.13e-3, 5.35e-3, 5.27e-3, 2.52e-2, 5.27e-3, 1.46e-1, 5.81e-5, 9.07e-1, 1.17,
        9.87e-2, 2.61e-2, 3.18e-2, 1e-6, 1.15e-2, 28.83, 28.31, 29.64,
    ];
    let space = ParameterSpace::new(params).expect("valid catalog");
    let network = ThermalNetwork::new(spec, &space.names()).expect("valid network");
    BuiltinModel { name: "M4", network, space, nominal }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StateSpaceModel;

    #[test]
    fn m3_structure() {
        let b = m3();
        assert_eq!(b.network.n_states(), 3);
        assert_eq!(b.network.input_names(), ["T_o", "T_z", "Q_gh", "Q_h"]);
        assert_eq!(b.space.n_free(), 15);
        let m = b.network.matrices(&b.nominal).unwrap();
        let th = &b.nominal;
        let c_m = th[6] * CAPACITY_SCALE;
        assert!((m.a[(2, 2)] + 1.0 / (th[2] * c_m)).abs() < 1e-18);
        // Metzler structure
        for i in 0..3 {
            assert!(m.a[(i, i)] < 0.0);
            for j in 0..3 {
                if i != j {
                    assert!(m.a[(i, j)] >= 0.0);
                }
            }
        }
        assert_eq!(m.c.as_slice(), &[0.0, 1.0, 0.0]);
        let eig = m.a.complex_eigenvalues();
        assert!(eig.iter().all(|l| l.re < 0.0));
    }

    #[test]
    fn m3_envelope_derivative() {
        let b = m3_with_scale(1.0);
        let mut theta = b.nominal.clone();
        theta[0] = 0.1;
        theta[4] = 10.0;
        let d = b.network.partials(&theta, 0).unwrap();
        assert!((d.a[(0, 0)] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn m4_nests_m3() {
        let b = m4();
        assert_eq!(b.network.n_states(), 4);
        assert_eq!(b.space.n_free(), 18);
        assert_eq!(b.network.input_names(), m3().network.input_names());
        let m = b.network.matrices(&b.nominal).unwrap();
        assert_eq!(m.c.as_slice(), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.sw[(3, 3)], 1e-6);
    }
}
