use desklcm::harness::checkpoint::Checkpoint;
use desklcm::harness::data::ToyDataset;
use desklcm::lcm::{ConsistencyModel, DistillParams};
use desklcm::nn::NetConfig;
use desklcm::schedule::{NoiseSchedule, ScheduleParams};
use desklcm::teacher::TeacherModel;
use desklcm::RngStream;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = ToyDataset::Rings2d;
    let (l, d) = ds.item_shape();
    let schedule = NoiseSchedule::new(ScheduleParams::default())?;
    let cfg = NetConfig::toy(d, l, ds.num_classes(), schedule.n());
    let teacher = TeacherModel::new(cfg, schedule, &RngStream::new(4))?;
    let student = ConsistencyModel::from_teacher(&teacher, DistillParams::default())?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("student.ckpt");
    let ck = Checkpoint::consistency(ds, student);
    ck.save(&path)?;
    let bytes = std::fs::read(&path)?;
    let again = Checkpoint::load(&path)?.to_bytes();
    println!("{} bytes, magic {:?}, identical after reload: {}", bytes.len(), &bytes[..4], bytes == again);

    let mut narrow = cfg;
    narrow.width = 32;
    match Checkpoint::load(&path)?.expect_architecture(&narrow) {
        Err(e) => println!("loading into a width-32 model: {e}"),
        Ok(()) => println!("unexpectedly accepted"),
    }
    Ok(())
}
