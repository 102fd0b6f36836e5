//! Minimal built-in pronunciation lexicon and a demo sentence generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::phoneme::{InventoryError, Level, Phoneme, Token, TokenSequence};

// Stress-free CMU pronunciations.
const LEXICON: &str = "\
a AH
about AH B AW T
after AE F T ER
again AH G EH N
air EH R
all AO L
also AO L S OW
always AO L W EY Z
and AE N D
animal AE N AH M AH L
apple AE P AH L
are AA R
arm AA R M
at AE T
away AH W EY
baby B EY B IY
back B AE K
bag B AE G
ball B AO L
bank B AE NG K
be B IY
beach B IY CH
bed B EH D
big B IH G
bird B ER D
black B L AE K
blue B L UW
boat B OW T
book B UH K
box B AA K S
boy B OY
bread B R EH D
bring B R IH NG
brother B R AH DH ER
brown B R AW N
bus B AH S
but B AH T
buy B AY
by B AY
cake K EY K
call K AO L
came K EY M
can K AE N
car K AA R
cat K AE T
chair CH EH R
child CH AY L D
city S IH T IY
clean K L IY N
close K L OW Z
cold K OW L D
come K AH M
cup K AH P
dark D AA R K
day D EY
did D IH D
dinner D IH N ER
do D UW
dog D AO G
door D AO R
down D AW N
drink D R IH NG K
each IY CH
early ER L IY
eat IY T
egg EH G
every EH V R IY
eye AY
face F EY S
fast F AE S T
father F AA DH ER
feel F IY L
find F AY N D
fire F AY ER
fish F IH SH
five F AY V
floor F L AO R
for F AO R
friend F R EH N D
from F R AH M
front F R AH N T
game G EY M
garden G AA R D AH N
get G EH T
girl G ER L
give G IH V
go G OW
good G UH D
grass G R AE S
green G R IY N
had HH AE D
hand HH AE N D
happy HH AE P IY
has HH AE Z
hat HH AE T
have HH AE V
he HH IY
her HH ER
here HH IY R
high HH AY
him HH IH M
his HH IH Z
home HH OW M
horse HH AO R S
hot HH AA T
house HH AW S
how HH AW
i AY
in IH N
is IH Z
it IH T
jump JH AH M P
just JH AH S T
keep K IY P
kind K AY N D
king K IH NG
kitchen K IH CH AH N
know N OW
lake L EY K
last L AE S T
late L EY T
learn L ER N
leg L EH G
let L EH T
light L AY T
like L AY K
little L IH T AH L
live L IH V
long L AO NG
look L UH K
love L AH V
made M EY D
make M EY K
man M AE N
many M EH N IY
may M EY
me M IY
milk M IH L K
money M AH N IY
moon M UW N
more M AO R
morning M AO R N IH NG
mother M AH DH ER
much M AH CH
music M Y UW Z IH K
my M AY
name N EY M
near N IH R
never N EH V ER
new N UW
nice N AY S
night N AY T
no N OW
not N AA T
now N AW
of AH V
off AO F
old OW L D
on AA N
one W AH N
open OW P AH N
orange AO R AH N JH
our AW ER
out AW T
over OW V ER
paper P EY P ER
park P AA R K
pen P EH N
people P IY P AH L
pick P IH K
pig P IH G
place P L EY S
play P L EY
please P L IY Z
put P UH T
rain R EY N
read R IY D
red R EH D
ride R AY D
right R AY T
river R IH V ER
road R OW D
room R UW M
run R AH N
sad S AE D
said S EH D
saw S AO
say S EY
school S K UW L
sea S IY
see S IY
seven S EH V AH N
she SH IY
ship SH IH P
shoe SH UW
shop SH AA P
sing S IH NG
sister S IH S T ER
sit S IH T
six S IH K S
sleep S L IY P
slow S L OW
small S M AO L
snow S N OW
so S OW
some S AH M
song S AO NG
soon S UW N
start S T AA R T
stop S T AA P
street S T R IY T
sun S AH N
table T EY B AH L
take T EY K
talk T AO K
tall T AO L
tea T IY
tell T EH L
ten T EH N
thank TH AE NG K
that DH AE T
the DH AH
their DH EH R
them DH EH M
then DH EH N
there DH EH R
these DH IY Z
they DH EY
thing TH IH NG
think TH IH NG K
this DH IH S
three TH R IY
time T AY M
to T UW
today T AH D EY
too T UW
top T AA P
town T AW N
toy T OY
train T R EY N
tree T R IY
two T UW
under AH N D ER
up AH P
us AH S
very V EH R IY
visit V IH Z AH T
voice V OY S
wait W EY T
walk W AO K
want W AA N T
warm W AO R M
was W AA Z
watch W AA CH
water W AO T ER
way W EY
we W IY
well W EH L
went W EH N T
were W ER
wet W EH T
what W AH T
when W EH N
where W EH R
white W AY T
who HH UW
why W AY
will W IH L
wind W IH N D
window W IH N D OW
with W IH DH
woman W UH M AH N
word W ER D
work W ER K
yellow Y EH L OW
yes Y EH S
you Y UW
young Y AH NG
your Y AO R
zoo Z UW
";

pub struct Lexicon {
    entries: Vec<(&'static str, Vec<Phoneme>)>,
}

impl Lexicon {
    /// The compiled-in demo lexicon.
    pub fn builtin() -> Lexicon {
        let entries = LEXICON
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let mut parts = line.split_whitespace();
                let word = parts.next().expect("lexicon word");
                let phones = parts
                    .map(|s| Phoneme::parse(s).expect("lexicon phoneme"))
                    .collect();
                (word, phones)
            })
            .collect();
        Lexicon { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.iter().map(|(w, _)| *w)
    }

    pub fn lookup(&self, word: &str) -> Option<&[Phoneme]> {
        let lower = word.to_lowercase();
        self.entries
            .binary_search_by(|(w, _)| (*w).cmp(lower.as_str()))
            .ok()
            .map(|i| self.entries[i].1.as_slice())
    }

    /// Converts a text line to a reference sequence at the requested level.
    ///
    /// At phoneme level the line may hold CMU symbols or lexicon words.
    pub fn line_to_sequence(&self, line: &str, level: Level) -> Result<TokenSequence, InventoryError> {
        let cleaned: String = line
            .chars()
            .map(|c| if c.is_alphanumeric() || c == '\'' || c.is_whitespace() { c } else { ' ' })
            .collect();
        match level {
            Level::Word => TokenSequence::parse(Level::Word, &cleaned),
            Level::Phoneme => {
                let direct = TokenSequence::parse(Level::Phoneme, &cleaned);
                // Uppercase lines are meant as CMU symbols; report their error as is.
                if direct.is_ok() || !cleaned.chars().any(char::is_lowercase) {
                    return direct;
                }
                let mut tokens = Vec::new();
                for word in cleaned.split_whitespace() {
                    let phones = self
                        .lookup(word)
                        .ok_or_else(|| InventoryError::UnknownSymbol(word.to_string()))?;
                    tokens.extend(phones.iter().copied().map(Token::Phoneme));
                }
                TokenSequence::new(Level::Phoneme, tokens)
            }
        }
    }
}

/// Deterministic demo sentences of 3 to 6 lexicon words.
pub fn demo_sentences(count: usize, seed: u64) -> Vec<String> {
    let lexicon = Lexicon::builtin();
    let words: Vec<&str> = lexicon.words().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(3..=6);
            (0..n)
                .map(|_| words[rng.random_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_is_sorted_and_parses() {
        let lex = Lexicon::builtin();
        assert!(lex.len() > 250);
        let words: Vec<_> = lex.words().collect();
        let mut sorted = words.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(words, sorted);
        assert_eq!(lex.lookup("Pen").unwrap().len(), 3);
        assert!(lex.lookup("zebra").is_none());
    }

    #[test]
    fn lines_accept_words_or_symbols() {
        let lex = Lexicon::builtin();
        let a = lex.line_to_sequence("a pen on the table.", Level::Phoneme).unwrap();
        assert_eq!(a.to_string(), "AH P EH N AA N DH AH T EY B AH L");
        let b = lex.line_to_sequence("P EH1 N", Level::Phoneme).unwrap();
        assert_eq!(b.to_string(), "P EH N");
        assert!(lex.line_to_sequence("xylophone", Level::Phoneme).is_err());
        let w = lex.line_to_sequence("A pen, on the table", Level::Word).unwrap();
        assert_eq!(w.len(), 5);
    }

    #[test]
    fn demo_sentences_are_deterministic() {
        assert_eq!(demo_sentences(20, 4), demo_sentences(20, 4));
        assert_ne!(demo_sentences(20, 4), demo_sentences(20, 5));
        let lex = Lexicon::builtin();
        for s in demo_sentences(50, 1) {
            lex.line_to_sequence(&s, Level::Phoneme).unwrap();
        }
    }
}
