use mmsurv_core::volume::CHANNELS;
use mmsurv_core::Volume;
use mmsurv_harness::volume_io::{MAGIC, VERSION};
use mmsurv_harness::{
    decode_volume, encode_volume, read_clinical_csv, read_volume, write_clinical_csv, write_volume, HarnessError, Mgmt, Resection, Sex,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HEADER: &str = "id,age_years,sex,resection,mgmt,time_months,event\n";

fn parse(body: &str) -> Result<mmsurv_harness::CohortTable, HarnessError> {
    read_clinical_csv(format!("{HEADER}{body}").as_bytes())
}

fn row_of(err: HarnessError) -> usize {
    match err {
        HarnessError::Parse { row, .. } => row,
        other => panic!("expected a parse error, got {other}"),
    }
}

#[test]
fn well_formed_file_materializes_na_levels() {
    let t = parse("a,61.5,male,GTR,methylated,12,1\nb,70,female,,,3.5,0\nc,44,female,NTR,NA,20,1\n").unwrap();
    assert_eq!(t.len(), 3);
    assert_eq!(t.patients[1].resection, Resection::NotAvailable);
    assert_eq!(t.patients[1].mgmt, Mgmt::NotAvailable);
    assert_eq!(t.patients[2].mgmt, Mgmt::NotAvailable);
    assert_eq!(t.patients[0].sex, Sex::Male);
    assert!(!t.patients[1].event);

    let mut out = Vec::new();
    write_clinical_csv(&t, &mut out).unwrap();
    assert_eq!(read_clinical_csv(out.as_slice()).unwrap(), t);
}

#[test]
fn malformed_rows_name_their_row() {
    assert_eq!(row_of(parse("a,60,male,GTR,NA,5,1\na,61,male,GTR,NA,5,1\n").unwrap_err()), 2);
    assert_eq!(row_of(parse("a,60,male,GTR,NA,5,1\nb,,male,GTR,NA,5,1\n").unwrap_err()), 2);
    assert_eq!(row_of(parse("a,sixty,male,GTR,NA,5,1\n").unwrap_err()), 1);
    assert_eq!(row_of(parse("a,60,male,GTR,NA,0,1\n").unwrap_err()), 1);
    assert_eq!(row_of(parse("a,60,male,GTR,NA,-2,1\n").unwrap_err()), 1);
    assert_eq!(row_of(parse("a,60,male,STR,NA,5,1\n").unwrap_err()), 1);
    assert_eq!(row_of(parse("a,60,male,GTR,NA,5,2\n").unwrap_err()), 1);
    assert_eq!(row_of(parse("a,60,,GTR,NA,5,1\n").unwrap_err()), 1);
}

#[test]
fn header_must_match_and_extra_columns_are_ignored() {
    let bad = "id,age,sex,resection,mgmt,time_months,event\na,60,male,GTR,NA,5,1\n";
    assert_eq!(row_of(read_clinical_csv(bad.as_bytes()).unwrap_err()), 0);
    let short = "id,age_years,sex\na,60,male\n";
    assert!(read_clinical_csv(short.as_bytes()).is_err());
    let extra = "id,age_years,sex,resection,mgmt,time_months,event,kps\na,60,male,GTR,NA,5,1,80\n";
    assert_eq!(read_clinical_csv(extra.as_bytes()).unwrap().len(), 1);
}

fn random_volume(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Volume {
    let n = CHANNELS * dims.iter().product::<usize>();
    Volume::new(dims, (0..n).map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff)).collect()).unwrap()
}

#[test]
fn volume_round_trip_is_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for dims in [[1, 1, 1], [3, 5, 7], [16, 16, 16]] {
        let v = random_volume(&mut rng, dims);
        let mut buf = Vec::new();
        write_volume(&v, &mut buf).unwrap();
        let back = read_volume(buf.as_slice()).unwrap();
        assert_eq!(back.dims(), dims);
        assert!(back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn volume_header_layout() {
    let v = Volume::zeros([2, 3, 4]);
    let bytes = encode_volume(&v);
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), VERSION);
    assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 4);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
    assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 4);
    assert_eq!(bytes.len(), 20 + 4 * 4 * 24);
}

#[test]
fn corrupt_volumes_are_format_errors() {
    let good = encode_volume(&Volume::zeros([2, 2, 2]));
    let is_format = |b: &[u8]| matches!(decode_volume(b), Err(HarnessError::Format(_)));
    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(is_format(&magic));
    let mut version = good.clone();
    version[4] = 2;
    assert!(is_format(&version));
    let mut dims = good.clone();
    dims[8] = 3;
    assert!(is_format(&dims));
    assert!(is_format(&good[..good.len() - 1]));
    assert!(is_format(&good[..10]));
    let mut zero = good.clone();
    zero[12..16].copy_from_slice(&0u32.to_le_bytes());
    assert!(is_format(&zero));
}
