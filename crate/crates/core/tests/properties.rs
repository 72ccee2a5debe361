mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use streamforge::codegen::{generate_pointwise_source, kernels, suffix_float_constants, Intent, Param, Precision};
use streamforge::fr::solver::{to_device_layout, to_host_layout};
use streamforge::harness::{geometric_sizes, median};
use streamforge::{Complex64, DType, HostArray, HostBuffer, OffloadArray, Runtime};

use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_programs_match_the_serial_oracle(seed in any::<u64>()) {
        let rt = runtime(1);
        let s = rt.create_stream(0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ops = random_program(&mut rng, 50);
        let hosts = random_hosts(&mut rng);
        prop_assert_eq!(runtime_execute(&s, &ops, &hosts, false), reference_execute(&ops, &hosts));
    }

    #[test]
    fn transfers_move_exactly_the_addressed_bytes(
        size in 1usize..4096,
        a in any::<prop::sample::Index>(),
        b in any::<prop::sample::Index>(),
        c in any::<prop::sample::Index>(),
        seed in any::<u8>(),
    ) {
        let rt = Runtime::with_devices(1).unwrap();
        let s = rt.get_default_stream(0).unwrap();
        let n = a.index(size + 1);
        let (off_h, off_d) = (b.index(size - n + 1), c.index(size - n + 1));
        let src: Vec<u8> = (0..size).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let host = HostBuffer::from_bytes(&src);
        let dev = s.allocate(size).unwrap();
        s.transfer_host2device(&host, &dev, n, off_h, off_d).unwrap();
        let out = HostBuffer::zeroed(size);
        s.transfer_device2host(&dev, &out, size, 0, 0).unwrap();
        s.sync().unwrap();
        let mut want = vec![0xCDu8; size];
        want[off_d..off_d + n].copy_from_slice(&src[off_h..off_h + n]);
        prop_assert_eq!(out.to_bytes(), want);
    }

    #[test]
    fn bind_and_update_host_preserve_bytes(
        shape in prop::collection::vec(1usize..6, 1..4),
        dtype in prop::sample::select(vec![DType::I64, DType::F32, DType::F64, DType::C128]),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let rt = Runtime::with_devices(1).unwrap();
        let s = rt.get_default_stream(0).unwrap();
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let host = match dtype {
            DType::I64 => HostArray::from_slice(&(0..n).map(|_| rng.gen::<i64>()).collect::<Vec<_>>(), &shape),
            DType::F32 => HostArray::from_slice(&(0..n).map(|_| rng.gen::<f32>()).collect::<Vec<_>>(), &shape),
            DType::F64 => HostArray::from_slice(&(0..n).map(|_| rng.gen::<f64>()).collect::<Vec<_>>(), &shape),
            _ => HostArray::from_slice(
                &(0..n).map(|_| Complex64::new(rng.gen(), rng.gen())).collect::<Vec<_>>(),
                &shape,
            ),
        }
        .unwrap();
        let before = host.buffer().to_bytes();
        let oa = OffloadArray::bind(&s, &host, true).unwrap();
        oa.update_host().unwrap();
        s.sync().unwrap();
        prop_assert_eq!(host.buffer().to_bytes(), before);
        prop_assert_eq!(oa.nbytes(), n * dtype.size());
    }

    #[test]
    fn suffixing_is_idempotent(text in "[0-9a-fA-FxX.eE+\\-*/() ;=uf]{0,40}") {
        let once = suffix_float_constants(&text, Precision::F32);
        prop_assert_eq!(suffix_float_constants(&once, Precision::F32), once.clone());
        prop_assert_eq!(suffix_float_constants(&text, Precision::F64), text);
    }

    #[test]
    fn unused_parameters_do_not_change_the_output(
        which in 0usize..6,
        name in "q[a-z]{1,6}",
        at in any::<prop::sample::Index>(),
        scalar in any::<bool>(),
    ) {
        let spec = kernels::all(Precision::F64).swap_remove(which);
        let mut extended = spec.clone();
        let p = if scalar { Param::scalar(&name) } else { Param::point(&name, Intent::In) };
        extended.params.insert(at.index(spec.params.len() + 1), p);
        let a = generate_pointwise_source(&spec).unwrap();
        let b = generate_pointwise_source(&extended).unwrap();
        prop_assert_eq!(a.statements, b.statements);
        prop_assert_eq!(a.pruned_params, b.pruned_params);
        prop_assert_eq!(a.text, b.text);
    }

    #[test]
    fn median_lies_within_the_sample(v in prop::collection::vec(-1e6f64..1e6, 1..50)) {
        let m = median(&v);
        let below = v.iter().filter(|&&x| x <= m).count();
        let above = v.iter().filter(|&&x| x >= m).count();
        prop_assert!(2 * below >= v.len() && 2 * above >= v.len());
    }

    #[test]
    fn geometric_sizes_are_increasing_and_bracketed(min in 1usize..5000, span in 0usize..1_000_000, factor in 1.1f64..8.0) {
        let max = min + span;
        let sizes = geometric_sizes(min, max, factor).unwrap();
        prop_assert_eq!(sizes[0], min);
        prop_assert_eq!(*sizes.last().unwrap(), max);
        prop_assert!(sizes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn layout_transposition_round_trips(ne in 1usize..40, np1 in 1usize..12) {
        let u: Vec<f64> = (0..ne * np1).map(|i| i as f64).collect();
        let d = to_device_layout(&u, ne, np1);
        for e in 0..ne {
            for j in 0..np1 {
                prop_assert_eq!(d[j * ne + e], u[e * np1 + j]);
            }
        }
        prop_assert_eq!(to_host_layout(&d, ne, np1), u);
    }
}
