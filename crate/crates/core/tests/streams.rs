mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use streamforge::{Error, HostBuffer, RequestKind, RequestStatus, Runtime, RuntimeConfig};

use common::*;

#[test]
fn default_stream_is_a_singleton_and_created_streams_are_distinct() {
    let rt = Runtime::with_devices(2).unwrap();
    let a = rt.get_default_stream(0).unwrap();
    assert_eq!(a, rt.get_default_stream(0).unwrap());
    assert_eq!(a, rt.device(0).unwrap().get_default_stream());
    assert_ne!(a, rt.get_default_stream(1).unwrap());
    let s1 = rt.create_stream(0).unwrap();
    let s2 = rt.create_stream(0).unwrap();
    assert_ne!(s1, s2);
    assert_ne!(s1, a);
    assert_eq!(s1.device_id(), 0);
}

#[test]
fn unknown_device_is_reported() {
    let rt = Runtime::with_devices(2).unwrap();
    assert_eq!(rt.get_default_stream(99).unwrap_err(), Error::DeviceNotFound(99));
    assert_eq!(rt.create_stream(2).unwrap_err(), Error::DeviceNotFound(2));
    assert_eq!(rt.list_devices().len(), 2);
}

#[test]
fn sync_on_an_empty_stream_returns_immediately() {
    let rt = Runtime::with_devices(1).unwrap();
    let s = rt.create_stream(0).unwrap();
    s.sync().unwrap();
    s.sync().unwrap();
    assert_eq!(s.last_seq(), 0);
}

#[test]
fn out_of_bounds_transfer_fails_at_sync_with_its_sequence_number() {
    let rt = Runtime::with_devices(1).unwrap();
    let s = rt.create_stream(0).unwrap();
    let p = s.allocate(16).unwrap();
    let host = HostBuffer::zeroed(64);
    s.transfer_host2device(&host, &p, 32, 0, 0).unwrap();
    let seq = s.last_seq();
    match s.sync().unwrap_err() {
        Error::Range { seq: got, .. } => assert_eq!(got, seq),
        e => panic!("unexpected {e:?}"),
    }
    // The stream recovers after the error has been reported.
    s.transfer_host2device(&host, &p, 16, 0, 0).unwrap();
    s.sync().unwrap();
}

#[test]
fn requests_after_a_failure_are_skipped_until_sync() {
    let rt = Runtime::with_devices(1).unwrap();
    let s = rt.create_stream(0).unwrap();
    let p = s.allocate(8).unwrap();
    let src = HostBuffer::from_bytes(&[7; 8]);
    let dst = HostBuffer::zeroed(8);
    s.transfer_host2device(&src, &p, 9, 0, 0).unwrap();
    let bad = s.last_seq();
    s.transfer_host2device(&src, &p, 8, 0, 0).unwrap();
    s.transfer_device2host(&p, &dst, 8, 0, 0).unwrap();
    let err = s.sync().unwrap_err();
    assert_eq!(err.seq(), Some(bad));
    assert_eq!(dst.to_bytes(), vec![0; 8]);
    let log = s.request_log();
    let after: Vec<_> = log.iter().filter(|r| r.seq > bad).collect();
    assert_eq!(after.len(), 2);
    assert!(after.iter().all(|r| r.status == RequestStatus::Failed));
}

#[test]
fn two_streams_on_one_device_each_match_the_serial_oracle() {
    let rt = runtime(1);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (pa, pb) = (random_program(&mut rng, 40), random_program(&mut rng, 40));
        let (ha, hb) = (random_hosts(&mut rng), random_hosts(&mut rng));
        let (sa, sb) = (rt.create_stream(0).unwrap(), rt.create_stream(0).unwrap());
        let (ra, rb) = std::thread::scope(|sc| {
            let ta = sc.spawn(|| runtime_execute(&sa, &pa, &ha, false));
            let tb = sc.spawn(|| runtime_execute(&sb, &pb, &hb, false));
            (ta.join().unwrap(), tb.join().unwrap())
        });
        assert_eq!(ra, reference_execute(&pa, &ha));
        assert_eq!(rb, reference_execute(&pb, &hb));
    }
}

#[test]
fn async_and_serial_execution_agree() {
    let rt = runtime(1);
    let s = rt.create_stream(0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let ops = random_program(&mut rng, 50);
        let hosts = random_hosts(&mut rng);
        assert_eq!(runtime_execute(&s, &ops, &hosts, false), runtime_execute(&s, &ops, &hosts, true));
    }
}

#[test]
fn log_records_every_request_in_order() {
    let rt = Runtime::with_devices(1).unwrap();
    let s = rt.create_stream(0).unwrap();
    let p = s.allocate(32).unwrap();
    let h = HostBuffer::zeroed(32);
    s.transfer_host2device(&h, &p, 32, 0, 0).unwrap();
    s.transfer_device2host(&p, &h, 32, 0, 0).unwrap();
    s.deallocate_device_memory(&p).unwrap();
    s.sync().unwrap();
    let kinds: Vec<_> = s.request_log().iter().map(|r| r.kind).collect();
    assert_eq!(
        kinds,
        [RequestKind::Alloc, RequestKind::TransferH2D, RequestKind::TransferD2H, RequestKind::Dealloc]
    );
    let seqs: Vec<_> = s.request_log().iter().map(|r| r.seq).collect();
    assert_eq!(seqs, [1, 2, 3, 4]);
    assert_eq!(s.completed_seq(), 4);
}

#[test]
fn device_count_comes_from_the_environment() {
    std::env::set_var("STREAMFORGE_DEVICES", "3");
    let rt = Runtime::from_env().unwrap();
    assert_eq!(rt.device_count(), 3);
    std::env::set_var("STREAMFORGE_DEVICES", "lots");
    assert!(matches!(RuntimeConfig::from_env(), Err(Error::Config(_))));
    std::env::remove_var("STREAMFORGE_DEVICES");
    assert_eq!(RuntimeConfig::from_env().unwrap().devices, 1);
}
