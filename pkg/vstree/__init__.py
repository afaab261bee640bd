# Variational soft trees and boosted ensembles
