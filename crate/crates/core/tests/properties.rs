use std::collections::HashSet;
use std::f64::consts::{PI, TAU};

use gearmec::geometry::Region;
use gearmec::linalg::{dense_solve, sparse_solve};
use gearmec::materials::{BHCurve, Materials, PermanentMagnet, SteelModel};
use gearmec::mesh::{LayerRule, PolarMesh, RotorLayout};
use gearmec::network::{assemble, AssemblyOptions, PermeabilityModel};
use gearmec::postproc::{flux_densities, odd_harmonic_peak};
use gearmec::sweep::{P1Range, SweepSpec};
use proptest::prelude::*;

const REGIONS: [Region; 5] = [
    Region::BackIron1,
    Region::Magnets1,
    Region::InnerGap,
    Region::Modulators,
    Region::Magnets3,
];

prop_compose! {
    fn mesh_strategy()(
        steps in prop::collection::vec(0.0005f64..0.01, 2..6),
        picks in prop::collection::vec(0usize..5, 6),
        n_al in 4usize..40,
        p1 in 1u32..4,
        q2 in 2u32..9,
        theta in (0.0f64..6.3, 0.0f64..6.3),
    ) -> PolarMesh {
        let mut radii = vec![0.02];
        for s in &steps {
            let last = *radii.last().unwrap();
            radii.push(last + s);
        }
        let regions: Vec<Region> = (0..steps.len()).map(|i| REGIONS[picks[i]]).collect();
        let rotors = RotorLayout {
            p1,
            p3: 5,
            q2,
            modulator_fill: 0.5,
            theta1: theta.0,
            theta2: theta.1,
            theta3: 0.0,
        };
        PolarMesh::from_rings(radii, regions, n_al, 0.08, PermanentMagnet::N42, rotors).unwrap()
    }
}

fn materials() -> Materials {
    Materials {
        steel: SteelModel::m250_like(),
        pm: PermanentMagnet::N42,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn system_is_symmetric_and_diagonally_dominant(
        mesh in mesh_strategy(),
        seed in prop::collection::vec(-1e-3f64..1e-3, 256),
        per_cell in any::<bool>(),
    ) {
        let phi: Vec<f64> = (0..mesh.loop_count()).map(|i| seed[i % seed.len()]).collect();
        let model = if per_cell { PermeabilityModel::PerCell } else { PermeabilityModel::PerTube };
        let opts = AssemblyOptions { model, ..AssemblyOptions::default() };
        let sys = assemble(&mesh, &materials(), Some(&phi), &opts);
        for m in [&sys.r_app, &sys.r_diff] {
            let n = m.dim();
            let mut off = vec![0.0; n];
            for (i, j, v) in m.triplets() {
                prop_assert_eq!(v.to_bits(), m.get(j, i).to_bits());
                if i != j {
                    prop_assert!(v <= 0.0);
                    off[i] += v.abs();
                }
            }
            for (i, o) in off.iter().enumerate() {
                let d = m.get(i, i);
                prop_assert!(d > 0.0);
                prop_assert!(d >= *o * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn sparse_and_dense_solves_agree(mesh in mesh_strategy()) {
        let sys = assemble(&mesh, &materials(), None, &AssemblyOptions::default());
        prop_assume!(sys.dim() <= 400);
        let s = sparse_solve(&sys.r_app, &sys.f).unwrap();
        let d = dense_solve(&sys.r_app, &sys.f).unwrap();
        let scale = d.iter().fold(1e-300f64, |m, x| m.max(x.abs()));
        for (a, b) in s.iter().zip(&d) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn every_cell_conserves_flux(mesh in mesh_strategy(), seed in prop::collection::vec(-1.0f64..1.0, 64)) {
        let phi: Vec<f64> = (0..mesh.loop_count()).map(|i| seed[(i * 7) % seed.len()]).collect();
        let sol = flux_densities(&mesh, &phi);
        for k in 0..sol.n_rl {
            for j in 0..sol.n_al {
                let [inner, outer, left, right] = sol.cell_tube_fluxes(k, j);
                prop_assert!((inner + left - outer - right).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn layer_rules_respect_minimum_and_grow(
        mult in 1.0f64..40.0,
        min in 1u32..6,
        t in 0.1f64..40.0,
        extra in 0.0f64..10.0,
    ) {
        let rule = LayerRule::Scaled { multiplier: mult, min_layers: min };
        let a = rule.layers(t, 10.0);
        let b = rule.layers(t + extra, 10.0);
        prop_assert!(a >= min);
        prop_assert!(b >= a);
    }

    #[test]
    fn bh_curve_is_monotone_and_invertible(h in 0.0f64..2e5, dh in 1.0f64..1e4) {
        let c = BHCurve::m250_like();
        let (b0, b1) = (c.b_of_h(h), c.b_of_h(h + dh));
        prop_assert!(b1 > b0);
        prop_assert!((c.h_of_b(b0) - h).abs() <= 1e-6 * h.max(1.0));
        prop_assert!(c.mu_apparent(b0) > 0.0 && c.mu_differential(b0) > 0.0);
    }

    #[test]
    fn sweep_ids_map_to_distinct_designs(
        ranges in prop::collection::vec(1usize..4, 8),
        p1s in prop::collection::vec(1usize..4, 1..3),
    ) {
        let list = |n: usize, base: f64| (0..n).map(|i| base + i as f64).collect::<Vec<_>>();
        let spec = SweepSpec {
            p1_by_g_r: p1s.iter().enumerate().map(|(i, &n)| P1Range {
                g_r: 3 + i as u32,
                p1: (2..2 + n as u32).collect(),
            }).collect(),
            r_o: list(ranges[0], 100.0),
            k_bi1: list(ranges[1], 0.1),
            t_pm1: list(ranges[2], 3.0),
            t_ag: list(ranges[3], 1.0),
            t_mods: list(ranges[4], 8.0),
            t_brg: list(ranges[5], 0.5),
            k_pm: list(ranges[6], 0.5),
            t_bi3: list(ranges[7], 10.0),
            ..SweepSpec::standard_ranges()
        };
        let n = spec.count();
        prop_assert_eq!(n as usize, ranges.iter().product::<usize>() * p1s.iter().sum::<usize>());
        let seen: HashSet<String> = (0..n).map(|id| format!("{:?}", spec.params(id))).collect();
        prop_assert_eq!(seen.len() as u64, n);
    }

    #[test]
    fn odd_harmonic_peak_is_equivariant(
        a in 0.5f64..10.0,
        phase in 0.0f64..TAU,
        scale in -5.0f64..5.0,
        n in 3usize..10,
    ) {
        prop_assume!(scale.abs() > 1e-3);
        let vals: Vec<f64> = (0..n).map(|i| a * ((i as f64 + 0.5) * PI / n as f64 + phase).sin()).collect();
        let scaled: Vec<f64> = vals.iter().map(|v| v * scale).collect();
        let (x1, t1) = odd_harmonic_peak(&vals);
        let (x2, t2) = odd_harmonic_peak(&scaled);
        prop_assert!((t2 - scale * t1).abs() <= 1e-9 * t2.abs().max(1.0));
        prop_assert!((x1 - x2).abs() < 1e-12);
        prop_assert!((t1.abs() - a).abs() <= 1e-4 * a);
    }
}
