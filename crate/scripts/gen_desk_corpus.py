#!/usr/bin/env python3
"""Regenerate the bundled desk corpora under data/.

English, French and German documents come from small encyclopedic
phrase-structure grammars with gender/case agreement. Python documents are
short function definitions harvested from the local CPython standard library
(PSF license). Output is deterministic for a given seed and stdlib tree.

usage: scripts/gen_desk_corpus.py [--docs N] [--seed S] [--out data]
"""
import argparse
import ast
import json
import pathlib
import random
import textwrap

# ---------------------------------------------------------------------------
# shared proper nouns

CITIES = {
    "en": ["London", "Paris", "Berlin", "Munich", "Vienna", "Geneva", "Lyon", "Hamburg",
           "Marseille", "Cologne", "Zurich", "Brussels", "Strasbourg", "Dresden", "Leipzig",
           "Bordeaux", "Toulouse", "Nantes", "Bremen", "Salzburg", "Basel", "Lille", "Nice",
           "Frankfurt", "Stuttgart", "Hanover", "Rouen", "Dijon", "Graz", "Bern"],
    "fr": ["Londres", "Paris", "Berlin", "Munich", "Vienne", "Genève", "Lyon", "Hambourg",
           "Marseille", "Cologne", "Zurich", "Bruxelles", "Strasbourg", "Dresde", "Leipzig",
           "Bordeaux", "Toulouse", "Nantes", "Brême", "Salzbourg", "Bâle", "Lille", "Nice",
           "Francfort", "Stuttgart", "Hanovre", "Rouen", "Dijon", "Graz", "Berne"],
    "de": ["London", "Paris", "Berlin", "München", "Wien", "Genf", "Lyon", "Hamburg",
           "Marseille", "Köln", "Zürich", "Brüssel", "Straßburg", "Dresden", "Leipzig",
           "Bordeaux", "Toulouse", "Nantes", "Bremen", "Salzburg", "Basel", "Lille", "Nizza",
           "Frankfurt", "Stuttgart", "Hannover", "Rouen", "Dijon", "Graz", "Bern"],
}

COUNTRIES = {
    "en": ["England", "France", "Germany", "Austria", "Switzerland", "Belgium", "Italy", "Spain"],
    "fr": ["l'Angleterre", "la France", "l'Allemagne", "l'Autriche", "la Suisse", "la Belgique",
           "l'Italie", "l'Espagne"],
    "de": ["England", "Frankreich", "Deutschland", "Österreich", "der Schweiz", "Belgien",
           "Italien", "Spanien"],
}

RIVERS = ["Rhine", "Danube", "Elbe", "Loire", "Seine", "Rhone", "Main", "Weser", "Garonne", "Aare"]
RIVERS_LOCAL = {
    "en": RIVERS,
    "fr": ["le Rhin", "le Danube", "l'Elbe", "la Loire", "la Seine", "le Rhône", "le Main",
           "la Weser", "la Garonne", "l'Aar"],
    "de": ["der Rhein", "die Donau", "die Elbe", "die Loire", "die Seine", "die Rhone",
           "der Main", "die Weser", "die Garonne", "die Aare"],
}

FIRST_M = {
    "en": ["John", "William", "Thomas", "George", "Henry", "Edward", "Richard", "James",
           "Charles", "Arthur", "Robert", "Samuel"],
    "fr": ["Jean", "Pierre", "Louis", "Jacques", "Henri", "François", "Émile", "Paul",
           "Antoine", "Victor", "Marcel", "Étienne"],
    "de": ["Johann", "Friedrich", "Heinrich", "Karl", "Wilhelm", "Otto", "Ludwig", "Hans",
           "Ernst", "Georg", "Max", "Walter"],
}
FIRST_F = {
    "en": ["Mary", "Elizabeth", "Anne", "Margaret", "Jane", "Emily", "Alice", "Catherine",
           "Helen", "Dorothy", "Grace", "Sarah"],
    "fr": ["Marie", "Jeanne", "Louise", "Marguerite", "Anne", "Camille", "Claire", "Hélène",
           "Madeleine", "Sophie", "Juliette", "Élise"],
    "de": ["Anna", "Maria", "Elisabeth", "Margarete", "Katharina", "Sophie", "Luise", "Helene",
           "Gertrud", "Charlotte", "Frieda", "Clara"],
}
LAST = {
    "en": ["Smith", "Taylor", "Brown", "Wilson", "Walker", "Wright", "Hughes", "Clarke",
           "Turner", "Baker", "Morris", "Cooper", "Ward", "Hall", "Wood"],
    "fr": ["Martin", "Bernard", "Dubois", "Moreau", "Laurent", "Lefèvre", "Girard", "Roux",
           "Fournier", "Mercier", "Blanc", "Chevalier", "Faure", "Rousseau", "Leroy"],
    "de": ["Müller", "Schmidt", "Schneider", "Fischer", "Weber", "Meyer", "Wagner", "Becker",
           "Schulz", "Hoffmann", "Koch", "Richter", "Klein", "Wolf", "Neumann"],
}

# ---------------------------------------------------------------------------
# English

EN_NOUNS = [("church", "churches"), ("bridge", "bridges"), ("castle", "castles"),
            ("museum", "museums"), ("school", "schools"), ("library", "libraries"),
            ("garden", "gardens"), ("tower", "towers"), ("market", "markets"),
            ("station", "stations"), ("harbour", "harbours"), ("village", "villages"),
            ("river", "rivers"), ("forest", "forests"), ("mountain", "mountains"),
            ("valley", "valleys"), ("road", "roads"), ("house", "houses"), ("theatre", "theatres"),
            ("university", "universities"), ("company", "companies"), ("book", "books"),
            ("song", "songs"), ("painting", "paintings"), ("army", "armies"), ("king", "kings"),
            ("queen", "queens"), ("government", "governments"), ("region", "regions"),
            ("island", "islands"), ("lake", "lakes"), ("factory", "factories"),
            ("hospital", "hospitals"), ("newspaper", "newspapers"), ("team", "teams"),
            ("festival", "festivals"), ("treaty", "treaties"), ("war", "wars"),
            ("century", "centuries"), ("language", "languages"), ("family", "families"),
            ("farmer", "farmers"), ("student", "students"), ("teacher", "teachers"),
            ("city", "cities"), ("street", "streets"), ("wall", "walls"), ("square", "squares"),
            ("monastery", "monasteries"), ("railway", "railways")]
EN_ADJ = ["old", "new", "large", "small", "famous", "important", "ancient", "modern", "beautiful",
          "quiet", "busy", "historic", "northern", "southern", "eastern", "western", "central",
          "wealthy", "poor", "narrow", "wide", "long", "short", "green", "popular", "local",
          "royal", "public", "private", "medieval"]
EN_VERBS = [("build", "builds", "built"), ("visit", "visits", "visited"),
            ("describe", "describes", "described"), ("destroy", "destroys", "destroyed"),
            ("restore", "restores", "restored"), ("own", "owns", "owned"),
            ("found", "founds", "founded"), ("support", "supports", "supported"),
            ("replace", "replaces", "replaced"), ("protect", "protects", "protected"),
            ("attract", "attracts", "attracted"), ("connect", "connects", "connected"),
            ("control", "controls", "controlled"), ("publish", "publishes", "published"),
            ("study", "studies", "studied"), ("design", "designs", "designed"),
            ("open", "opens", "opened"), ("close", "closes", "closed"),
            ("sell", "sells", "sold"), ("write", "writes", "wrote")]
EN_PROF = ["painter", "writer", "composer", "architect", "physician", "lawyer", "engineer",
           "historian", "poet", "merchant", "politician", "chemist", "teacher", "philosopher",
           "actor", "singer", "mathematician", "journalist"]
EN_FIELDS = ["law", "medicine", "history", "music", "chemistry", "philosophy", "mathematics",
             "architecture", "theology", "painting"]
EN_NAT = ["English", "French", "German", "Austrian", "Swiss", "Belgian", "Italian", "Spanish"]
EN_SEASONS = ["spring", "summer", "autumn", "winter"]


def en_a(word):
    return ("an " if word[0] in "aeiou" else "a ") + word


def en_np(r, plural=False, definite=None):
    sg, pl = r.choice(EN_NOUNS)
    noun = pl if plural else sg
    if r.random() < 0.5:
        noun = r.choice(EN_ADJ) + " " + noun
    if definite is None:
        definite = r.random() < 0.6
    if plural:
        return ("the " + noun) if definite else noun
    return ("the " + noun) if definite else en_a(noun)


def en_person(r):
    if r.random() < 0.5:
        return r.choice(FIRST_M["en"]) + " " + r.choice(LAST["en"]), "he"
    return r.choice(FIRST_F["en"]) + " " + r.choice(LAST["en"]), "she"


def en_sentence(r):
    k = r.randrange(12)
    city = r.choice(CITIES["en"])
    year = r.randrange(1100, 2000)
    if k == 0:
        return f"{city} is {en_a(r.choice(EN_ADJ))} city in {r.choice(COUNTRIES['en'])}."
    if k == 1:
        return f"The city has about {r.randrange(2, 900) * 1000} inhabitants."
    if k == 2:
        sg, _ = r.choice(EN_NOUNS)
        v = r.choice(EN_VERBS)
        return f"The {r.choice(EN_ADJ)} {sg} was {v[2]} in {year}."
    if k == 3:
        name, _ = en_person(r)
        return (f"{name} ({year}–{year + r.randrange(25, 90)}) was {en_a(r.choice(EN_NAT))} "
                f"{r.choice(EN_PROF)}.")
    if k == 4:
        subj = en_np(r)
        v = r.choice(EN_VERBS)
        verb = v[2] if r.random() < 0.6 else v[1]
        s = f"{subj} {verb} {en_np(r, plural=r.random() < 0.3)}"
        if r.random() < 0.5:
            s += f" in {city}"
        return s[0].upper() + s[1:] + "."
    if k == 5:
        name, pron = en_person(r)
        return (f"In {year}, {name} moved to {city}, where {pron} worked as "
                f"{en_a(r.choice(EN_PROF))}.")
    if k == 6:
        return f"The {r.choice(RIVERS)} flows through {city} and the {r.choice(EN_ADJ)} valley."
    if k == 7:
        a, _ = r.choice(EN_NOUNS)
        b, _ = r.choice(EN_NOUNS)
        return f"The {a} of the {b} is {r.choice(EN_ADJ)}."
    if k == 8:
        _, pl = r.choice(EN_NOUNS)
        v = r.choice(EN_VERBS)
        return f"Many {pl} {v[0]} {en_np(r)} during the {r.choice(EN_SEASONS)}."
    if k == 9:
        name, pron = en_person(r)
        return (f"{name} studied {r.choice(EN_FIELDS)} at the university of {city} "
                f"and later became {en_a(r.choice(EN_PROF))}.")
    if k == 10:
        sg, _ = r.choice(EN_NOUNS)
        return f"Since {year}, the {sg} has been part of {en_np(r, definite=True)}."
    sg, _ = r.choice(EN_NOUNS)
    return f"It is one of the most {r.choice(EN_ADJ)} {sg}s in the region."


# ---------------------------------------------------------------------------
# French

# (singular, plural, gender)
FR_NOUNS = [("église", "églises", "f"), ("pont", "ponts", "m"), ("château", "châteaux", "m"),
            ("musée", "musées", "m"), ("école", "écoles", "f"), ("bibliothèque", "bibliothèques", "f"),
            ("jardin", "jardins", "m"), ("tour", "tours", "f"), ("marché", "marchés", "m"),
            ("gare", "gares", "f"), ("port", "ports", "m"), ("village", "villages", "m"),
            ("rivière", "rivières", "f"), ("forêt", "forêts", "f"), ("montagne", "montagnes", "f"),
            ("vallée", "vallées", "f"), ("route", "routes", "f"), ("maison", "maisons", "f"),
            ("théâtre", "théâtres", "m"), ("université", "universités", "f"),
            ("entreprise", "entreprises", "f"), ("livre", "livres", "m"), ("chanson", "chansons", "f"),
            ("tableau", "tableaux", "m"), ("armée", "armées", "f"), ("roi", "rois", "m"),
            ("reine", "reines", "f"), ("gouvernement", "gouvernements", "m"),
            ("région", "régions", "f"), ("île", "îles", "f"), ("lac", "lacs", "m"),
            ("usine", "usines", "f"), ("hôpital", "hôpitaux", "m"), ("journal", "journaux", "m"),
            ("équipe", "équipes", "f"), ("festival", "festivals", "m"), ("traité", "traités", "m"),
            ("guerre", "guerres", "f"), ("siècle", "siècles", "m"), ("langue", "langues", "f"),
            ("famille", "familles", "f"), ("paysan", "paysans", "m"), ("étudiant", "étudiants", "m"),
            ("ville", "villes", "f"), ("rue", "rues", "f"), ("mur", "murs", "m"),
            ("place", "places", "f"), ("abbaye", "abbayes", "f"), ("chemin", "chemins", "m")]
# (m sg, f sg, m pl, f pl, before-noun)
FR_ADJ = [("ancien", "ancienne", "anciens", "anciennes", False),
          ("nouveau", "nouvelle", "nouveaux", "nouvelles", True),
          ("grand", "grande", "grands", "grandes", True),
          ("petit", "petite", "petits", "petites", True),
          ("célèbre", "célèbre", "célèbres", "célèbres", False),
          ("important", "importante", "importants", "importantes", False),
          ("moderne", "moderne", "modernes", "modernes", False),
          ("beau", "belle", "beaux", "belles", True),
          ("calme", "calme", "calmes", "calmes", False),
          ("historique", "historique", "historiques", "historiques", False),
          ("riche", "riche", "riches", "riches", False),
          ("pauvre", "pauvre", "pauvres", "pauvres", False),
          ("étroit", "étroite", "étroits", "étroites", False),
          ("large", "large", "larges", "larges", False),
          ("long", "longue", "longs", "longues", True),
          ("vert", "verte", "verts", "vertes", False),
          ("populaire", "populaire", "populaires", "populaires", False),
          ("royal", "royale", "royaux", "royales", False),
          ("public", "publique", "publics", "publiques", False),
          ("médiéval", "médiévale", "médiévaux", "médiévales", False),
          ("central", "centrale", "centraux", "centrales", False),
          ("vieux", "vieille", "vieux", "vieilles", True)]
# (infinitive, 3sg present, 3pl present, participle)
FR_VERBS = [("construire", "construit", "construisent", "construit"),
            ("visiter", "visite", "visitent", "visité"),
            ("décrire", "décrit", "décrivent", "décrit"),
            ("détruire", "détruit", "détruisent", "détruit"),
            ("restaurer", "restaure", "restaurent", "restauré"),
            ("posséder", "possède", "possèdent", "possédé"),
            ("fonder", "fonde", "fondent", "fondé"),
            ("soutenir", "soutient", "soutiennent", "soutenu"),
            ("remplacer", "remplace", "remplacent", "remplacé"),
            ("protéger", "protège", "protègent", "protégé"),
            ("attirer", "attire", "attirent", "attiré"),
            ("relier", "relie", "relient", "relié"),
            ("contrôler", "contrôle", "contrôlent", "contrôlé"),
            ("publier", "publie", "publient", "publié"),
            ("étudier", "étudie", "étudient", "étudié"),
            ("dessiner", "dessine", "dessinent", "dessiné"),
            ("ouvrir", "ouvre", "ouvrent", "ouvert"),
            ("fermer", "ferme", "ferment", "fermé"),
            ("vendre", "vend", "vendent", "vendu"),
            ("écrire", "écrit", "écrivent", "écrit")]
FR_PROF = [("peintre", "peintre"), ("écrivain", "écrivaine"), ("compositeur", "compositrice"),
           ("architecte", "architecte"), ("médecin", "médecin"), ("avocat", "avocate"),
           ("ingénieur", "ingénieure"), ("historien", "historienne"), ("poète", "poétesse"),
           ("marchand", "marchande"), ("homme politique", "femme politique"),
           ("chimiste", "chimiste"), ("professeur", "professeure"), ("philosophe", "philosophe"),
           ("acteur", "actrice"), ("chanteur", "chanteuse"), ("mathématicien", "mathématicienne"),
           ("journaliste", "journaliste")]
FR_FIELDS = ["le droit", "la médecine", "l'histoire", "la musique", "la chimie", "la philosophie",
             "les mathématiques", "l'architecture", "la théologie", "la peinture"]
FR_NAT = [("anglais", "anglaise"), ("français", "française"), ("allemand", "allemande"),
          ("autrichien", "autrichienne"), ("suisse", "suisse"), ("belge", "belge"),
          ("italien", "italienne"), ("espagnol", "espagnole")]
FR_SEASONS = ["le printemps", "l'été", "l'automne", "l'hiver"]


def fr_vowel(w):
    return w[0].lower() in "aeiouyéèêâîôûh"


def fr_adj_form(adj, gender, plural):
    return adj[(2 if plural else 0) + (1 if gender == "f" else 0)]


def fr_np(r, plural=False, definite=None, with_adj=None):
    sg, pl, g = r.choice(FR_NOUNS)
    noun = pl if plural else sg
    if with_adj is None:
        with_adj = r.random() < 0.5
    before = False
    if with_adj:
        adj = r.choice(FR_ADJ)
        form = fr_adj_form(adj, g, plural)
        if adj[4]:
            noun = form + " " + noun
            before = True
        else:
            noun = noun + " " + form
    if definite is None:
        definite = r.random() < 0.6
    if plural:
        return ("les " if definite else ("de " if before else "des ")) + noun
    if definite:
        if fr_vowel(noun):
            return "l'" + noun
        return ("la " if g == "f" else "le ") + noun
    return ("une " if g == "f" else "un ") + noun


def fr_person(r):
    if r.random() < 0.5:
        return r.choice(FIRST_M["fr"]) + " " + r.choice(LAST["fr"]), "m"
    return r.choice(FIRST_F["fr"]) + " " + r.choice(LAST["fr"]), "f"


def fr_de_np(np):
    if np.startswith("le "):
        return "du " + np[3:]
    if np.startswith("les "):
        return "des " + np[4:]
    return "de " + np


def fr_sentence(r):
    k = r.randrange(12)
    city = r.choice(CITIES["fr"])
    year = r.randrange(1100, 2000)
    if k == 0:
        adj = r.choice(FR_ADJ)
        form = fr_adj_form(adj, "f", False)
        ville = f"une {form} ville" if adj[4] else f"une ville {form}"
        return f"{city} est {ville} de {r.choice(COUNTRIES['fr'])}."
    if k == 1:
        return f"La ville compte environ {r.randrange(2, 900) * 1000} habitants."
    if k == 2:
        sg, _, g = r.choice(FR_NOUNS)
        v = r.choice(FR_VERBS)
        part = v[3] + ("e" if g == "f" else "")
        art = "l'" if fr_vowel(sg) else ("la " if g == "f" else "le ")
        return f"{(art + sg)[0].upper() + (art + sg)[1:]} a été {part} en {year}."
    if k == 3:
        name, g = fr_person(r)
        nat = r.choice(FR_NAT)[1 if g == "f" else 0]
        prof = r.choice(FR_PROF)[1 if g == "f" else 0]
        art = "une" if g == "f" else "un"
        return f"{name} ({year}–{year + r.randrange(25, 90)}) était {art} {prof} {nat}."
    if k == 4:
        subj = fr_np(r)
        v = r.choice(FR_VERBS)
        verb = ("a " + v[3]) if r.random() < 0.6 else v[1]
        s = f"{subj} {verb} {fr_np(r, plural=r.random() < 0.3)}"
        if r.random() < 0.5:
            s += f" à {city}"
        return s[0].upper() + s[1:] + "."
    if k == 5:
        name, g = fr_person(r)
        prof = r.choice(FR_PROF)[1 if g == "f" else 0]
        pron = "elle" if g == "f" else "il"
        moved = "installée" if g == "f" else "installé"
        art = "une" if g == "f" else "un"
        return (f"En {year}, {name} s'est {moved} à {city}, où {pron} a travaillé comme "
                f"{prof}.").replace(f"comme {art} ", "comme ")
    if k == 6:
        river = r.choice(RIVERS_LOCAL["fr"])
        adj = r.choice(FR_ADJ)
        return f"{river[0].upper() + river[1:]} traverse {city} et la vallée {fr_adj_form(adj, 'f', False)}."
    if k == 7:
        a = fr_np(r, definite=True, with_adj=False)
        b = fr_np(r, definite=True, with_adj=False)
        g = "f" if a.startswith("la ") else "m"
        if a.startswith("l'"):
            g = r.choice("mf")
        adj = fr_adj_form(r.choice(FR_ADJ), g, False)
        s = f"{a} {fr_de_np(b)} est {adj}."
        return s[0].upper() + s[1:]
    if k == 8:
        _, pl, _ = r.choice(FR_NOUNS)
        v = r.choice(FR_VERBS)
        return f"De nombreux {pl} {v[2]} {fr_np(r)} pendant {r.choice(FR_SEASONS)}."
    if k == 9:
        name, g = fr_person(r)
        prof = r.choice(FR_PROF)[1 if g == "f" else 0]
        dev = "devenue" if g == "f" else "devenu"
        return (f"{name} a étudié {r.choice(FR_FIELDS)} à l'université de {city} "
                f"et est ensuite {dev} {prof}.")
    if k == 10:
        a = fr_np(r, definite=True, with_adj=False)
        b = fr_np(r, definite=True)
        s = f"Depuis {year}, {a} fait partie {fr_de_np(b)}."
        return s
    sg, pl, g = r.choice(FR_NOUNS)
    adj = fr_adj_form(r.choice(FR_ADJ), g, True)
    pron = "C'est l'une" if g == "f" else "C'est l'un"
    return f"{pron} des {pl} les plus {adj} de la région."


# ---------------------------------------------------------------------------
# German

# (singular, plural, gender)
DE_NOUNS = [("Kirche", "Kirchen", "f"), ("Brücke", "Brücken", "f"), ("Burg", "Burgen", "f"),
            ("Museum", "Museen", "n"), ("Schule", "Schulen", "f"), ("Bibliothek", "Bibliotheken", "f"),
            ("Garten", "Gärten", "m"), ("Turm", "Türme", "m"), ("Markt", "Märkte", "m"),
            ("Bahnhof", "Bahnhöfe", "m"), ("Hafen", "Häfen", "m"), ("Dorf", "Dörfer", "n"),
            ("Fluss", "Flüsse", "m"), ("Wald", "Wälder", "m"), ("Berg", "Berge", "m"),
            ("Tal", "Täler", "n"), ("Straße", "Straßen", "f"), ("Haus", "Häuser", "n"),
            ("Theater", "Theater", "n"), ("Universität", "Universitäten", "f"),
            ("Firma", "Firmen", "f"), ("Buch", "Bücher", "n"), ("Lied", "Lieder", "n"),
            ("Gemälde", "Gemälde", "n"), ("Armee", "Armeen", "f"), ("König", "Könige", "m"),
            ("Königin", "Königinnen", "f"), ("Regierung", "Regierungen", "f"),
            ("Region", "Regionen", "f"), ("Insel", "Inseln", "f"), ("See", "Seen", "m"),
            ("Fabrik", "Fabriken", "f"), ("Krankenhaus", "Krankenhäuser", "n"),
            ("Zeitung", "Zeitungen", "f"), ("Mannschaft", "Mannschaften", "f"),
            ("Fest", "Feste", "n"), ("Vertrag", "Verträge", "m"), ("Krieg", "Kriege", "m"),
            ("Jahrhundert", "Jahrhunderte", "n"), ("Sprache", "Sprachen", "f"),
            ("Familie", "Familien", "f"), ("Bauer", "Bauern", "m"), ("Student", "Studenten", "m"),
            ("Stadt", "Städte", "f"), ("Gasse", "Gassen", "f"), ("Mauer", "Mauern", "f"),
            ("Platz", "Plätze", "m"), ("Kloster", "Klöster", "n"), ("Weg", "Wege", "m")]
DE_ADJ = ["alt", "neu", "groß", "klein", "berühmt", "wichtig", "modern", "schön", "ruhig",
          "historisch", "reich", "arm", "schmal", "breit", "lang", "kurz", "grün", "beliebt",
          "königlich", "öffentlich", "mittelalterlich", "zentral", "nördlich", "südlich"]
# (3sg present, 3pl present, participle, auxiliary)
DE_VERBS = [("baut", "bauen", "gebaut"), ("besucht", "besuchen", "besucht"),
            ("beschreibt", "beschreiben", "beschrieben"), ("zerstört", "zerstören", "zerstört"),
            ("restauriert", "restaurieren", "restauriert"), ("besitzt", "besitzen", "besessen"),
            ("gründet", "gründen", "gegründet"), ("unterstützt", "unterstützen", "unterstützt"),
            ("ersetzt", "ersetzen", "ersetzt"), ("schützt", "schützen", "geschützt"),
            ("verbindet", "verbinden", "verbunden"), ("kontrolliert", "kontrollieren", "kontrolliert"),
            ("veröffentlicht", "veröffentlichen", "veröffentlicht"),
            ("untersucht", "untersuchen", "untersucht"), ("entwirft", "entwerfen", "entworfen"),
            ("öffnet", "öffnen", "geöffnet"), ("schließt", "schließen", "geschlossen"),
            ("verkauft", "verkaufen", "verkauft"), ("schreibt", "schreiben", "geschrieben"),
            ("erweitert", "erweitern", "erweitert")]
DE_PROF = [("Maler", "Malerin"), ("Schriftsteller", "Schriftstellerin"),
           ("Komponist", "Komponistin"), ("Architekt", "Architektin"), ("Arzt", "Ärztin"),
           ("Anwalt", "Anwältin"), ("Ingenieur", "Ingenieurin"), ("Historiker", "Historikerin"),
           ("Dichter", "Dichterin"), ("Kaufmann", "Kauffrau"), ("Politiker", "Politikerin"),
           ("Chemiker", "Chemikerin"), ("Lehrer", "Lehrerin"), ("Philosoph", "Philosophin"),
           ("Schauspieler", "Schauspielerin"), ("Sänger", "Sängerin"),
           ("Mathematiker", "Mathematikerin"), ("Journalist", "Journalistin")]
DE_FIELDS = ["Rechtswissenschaft", "Medizin", "Geschichte", "Musik", "Chemie", "Philosophie",
             "Mathematik", "Architektur", "Theologie", "Malerei"]
DE_NAT = ["englisch", "französisch", "deutsch", "österreichisch", "schweizerisch", "belgisch",
          "italienisch", "spanisch"]
DE_SEASONS = ["Frühling", "Sommer", "Herbst", "Winter"]

DE_DEF = {("nom", "m"): "der", ("nom", "f"): "die", ("nom", "n"): "das", ("nom", "p"): "die",
          ("acc", "m"): "den", ("acc", "f"): "die", ("acc", "n"): "das", ("acc", "p"): "die",
          ("dat", "m"): "dem", ("dat", "f"): "der", ("dat", "n"): "dem", ("dat", "p"): "den"}
DE_INDEF = {("nom", "m"): "ein", ("nom", "f"): "eine", ("nom", "n"): "ein",
            ("acc", "m"): "einen", ("acc", "f"): "eine", ("acc", "n"): "ein",
            ("dat", "m"): "einem", ("dat", "f"): "einer", ("dat", "n"): "einem"}


def de_adj_ending(case, g, definite):
    if g == "p":
        if definite or case == "dat":
            return "en"
        return "e"
    if definite:
        if case == "nom" or (case == "acc" and g != "m"):
            return "e"
        return "en"
    if case == "dat":
        return "en"
    if g == "m":
        return "er" if case == "nom" else "en"
    if g == "f":
        return "e"
    return "es"


def de_np(r, case="nom", plural=False, definite=None, with_adj=None):
    sg, pl, g = r.choice(DE_NOUNS)
    gg = "p" if plural else g
    noun = pl if plural else sg
    if plural and case == "dat" and not noun.endswith(("n", "s")):
        noun += "n"
    if definite is None:
        definite = r.random() < 0.6
    if with_adj is None:
        with_adj = r.random() < 0.5
    if with_adj:
        noun = r.choice(DE_ADJ) + de_adj_ending(case, gg, definite) + " " + noun
    if definite:
        return DE_DEF[(case, gg)] + " " + noun, gg
    if plural:
        return noun, gg
    return DE_INDEF[(case, gg)] + " " + noun, gg


def de_person(r):
    if r.random() < 0.5:
        return r.choice(FIRST_M["de"]) + " " + r.choice(LAST["de"]), "m"
    return r.choice(FIRST_F["de"]) + " " + r.choice(LAST["de"]), "f"


def de_sentence(r):
    k = r.randrange(12)
    city = r.choice(CITIES["de"])
    year = r.randrange(1100, 2000)
    if k == 0:
        adj = r.choice(DE_ADJ)
        return f"{city} ist eine {adj}e Stadt in {r.choice(COUNTRIES['de'])}."
    if k == 1:
        return f"Die Stadt hat etwa {r.randrange(2, 900) * 1000} Einwohner."
    if k == 2:
        np, g = de_np(r, "nom", definite=True)
        v = r.choice(DE_VERBS)
        aux = "wurden" if g == "p" else "wurde"
        return f"{np[0].upper() + np[1:]} {aux} im Jahr {year} {v[2]}."
    if k == 3:
        name, g = de_person(r)
        prof = r.choice(DE_PROF)[1 if g == "f" else 0]
        nat = r.choice(DE_NAT)
        art, end = ("eine", "e") if g == "f" else ("ein", "er")
        return f"{name} ({year}–{year + r.randrange(25, 90)}) war {art} {nat}{end} {prof}."
    if k == 4:
        subj, g = de_np(r, "nom")
        obj, _ = de_np(r, "acc", plural=r.random() < 0.3)
        v = r.choice(DE_VERBS)
        if r.random() < 0.6:
            aux = "haben" if g == "p" else "hat"
            s = f"{subj} {aux} {obj}"
            if r.random() < 0.5:
                s += f" in {city}"
            s += f" {v[2]}"
        else:
            verb = v[1] if g == "p" else v[0]
            s = f"{subj} {verb} {obj}"
            if r.random() < 0.5:
                s += f" in {city}"
        return s[0].upper() + s[1:] + "."
    if k == 5:
        name, g = de_person(r)
        prof = r.choice(DE_PROF)[1 if g == "f" else 0]
        pron = "sie" if g == "f" else "er"
        return f"Im Jahr {year} zog {name} nach {city}, wo {pron} als {prof} arbeitete."
    if k == 6:
        river = r.choice(RIVERS_LOCAL["de"])
        return f"{river[0].upper() + river[1:]} fließt durch {city} und das {r.choice(DE_ADJ)}e Tal."
    if k == 7:
        a, g = de_np(r, "nom", definite=True, with_adj=False)
        b, gb = de_np(r, "dat", definite=True, with_adj=False)
        return f"{a[0].upper() + a[1:]} von {b} ist {r.choice(DE_ADJ)}."
    if k == 8:
        _, pl, _ = r.choice(DE_NOUNS)
        v = r.choice(DE_VERBS)
        obj, _ = de_np(r, "acc")
        return f"Viele {pl} {v[1]} im {r.choice(DE_SEASONS)} {obj}."
    if k == 9:
        name, g = de_person(r)
        prof = r.choice(DE_PROF)[1 if g == "f" else 0]
        pron = "sie" if g == "f" else "er"
        return (f"{name} studierte {r.choice(DE_FIELDS)} an der Universität {city} "
                f"und wurde später {prof}.")
    if k == 10:
        a, g = de_np(r, "nom", definite=True, with_adj=False)
        b, _ = de_np(r, "dat", definite=True)
        verb = "gehören" if g == "p" else "gehört"
        return f"Seit {year} {verb} {a} zu {b}."
    _, pl, _ = r.choice(DE_NOUNS)
    adj = r.choice(DE_ADJ)
    return f"Es gehört zu den {adj}sten {pl}n der Region." if not pl.endswith(("n", "s")) else f"Es gehört zu den {adj}sten {pl} der Region."


# ---------------------------------------------------------------------------
# Python

def python_snippets(root, limit_lines=12):
    out = []
    seen = set()
    for p in sorted(pathlib.Path(root).rglob("*.py")):
        if "site-packages" in p.parts or "dist-packages" in p.parts:
            continue
        try:
            src = p.read_text()
        except Exception:
            continue
        if not src.isascii():
            continue
        try:
            tree = ast.parse(src)
        except Exception:
            continue
        lines = src.splitlines()
        for node in ast.walk(tree):
            if not isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
                continue
            start = node.lineno - 1
            if node.decorator_list:
                start = node.decorator_list[0].lineno - 1
            n = node.end_lineno - start
            if n < 2 or n > limit_lines:
                continue
            body = textwrap.dedent("\n".join(lines[start:node.end_lineno])).strip("\n")
            if not body.strip() or body in seen:
                continue
            seen.add(body)
            out.append(body)
    return out


def natural_docs(lang, n, r):
    gen = {"en": en_sentence, "fr": fr_sentence, "de": de_sentence}[lang]
    docs = []
    for _ in range(n):
        k = r.choice([1, 1, 2, 2, 2, 3])
        docs.append(" ".join(gen(r) for _ in range(k)))
    return docs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--docs", type=int, default=10000)
    ap.add_argument("--seed", type=int, default=20240711)
    ap.add_argument("--out", default="data")
    ap.add_argument("--stdlib", default="/usr/lib/python3.10")
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for lang in ["en", "fr", "de"]:
        r = random.Random(f"{args.seed}-{lang}")
        docs = natural_docs(lang, args.docs, r)
        write(out / f"desk_{lang}.jsonl", docs, lang)
    snippets = python_snippets(args.stdlib)
    r = random.Random(f"{args.seed}-py")
    r.shuffle(snippets)
    write(out / "desk_py.jsonl", snippets[: args.docs], "py")


def write(path, docs, lang):
    with open(path, "w", encoding="utf-8") as f:
        for d in docs:
            f.write(json.dumps({"text": d, "lang": lang}, ensure_ascii=False) + "\n")
    print(path, len(docs), sum(len(d.encode()) for d in docs), "bytes")


if __name__ == "__main__":
    main()
