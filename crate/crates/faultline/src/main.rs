fn main() {
    println!("faultline CLI placeholder");
}
