fn main() {
    println!("textspot CLI placeholder");
}
